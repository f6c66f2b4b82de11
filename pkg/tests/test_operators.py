import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hardylab import operators as ops
from hardylab.findim_lab import degenerate_chiral_model
from hardylab.norms import bmo_norm
from hardylab.quantities import QuantityDescriptor, eval_quantity, real_pairing
from hardylab.spectral_core import Field, GridSpec, random_bandlimited

G1 = GridSpec(1, 64)
G2 = GridSpec(2, 32)
G16 = GridSpec(2, 16)
KINDS = [
    ("planar_jacobian", G2),
    ("line_q1", G1),
    ("line_q2", G1),
    ("riesz_combination", G1),
    ("riesz_combination", G2),
    ("wu_bivector:1,2", G2),
    ("monge_ampere", G2),
    ("paracommutator:wu_m1", G2),
    ("paracommutator:hilbert_q1", G1),
]
COMMUTATOR_KINDS = [k for k in KINDS if not k[0].startswith("paracommutator")]
seeds = st.integers(0, 2**32 - 1)


def sample_w(d, rng, kmax=None):
    return random_bandlimited(d.grid, rng, kmax=kmax or d.grid.n // 4 - 1, real=not d.complex_h)


def sample_b(g, rng, kmax=None):
    return random_bandlimited(g, rng, kmax=kmax or g.n // 4 - 1, real=True)


def single_mode_b(g, k=(1, 2)):
    x, y = g.coords()
    return Field(g, np.cos(k[0] * x + k[1] * y))


# ---------------------------------------------------------------- apply_tb


@pytest.mark.parametrize("text,grid", COMMUTATOR_KINDS)
def test_constant_b_gives_zero(text, grid, rng):
    d = QuantityDescriptor.parse(text, grid)
    h = ops.make_handle(d, Field(grid, np.full(grid.shape, 2.5)))
    w = sample_w(d, rng)
    assert np.max(np.abs(ops.apply_tb(h, w).values)) <= 1e-12 * np.abs(w.values).max()


@pytest.mark.parametrize("text,grid", KINDS)
def test_zero_w_gives_zero(text, grid, rng):
    d = QuantityDescriptor.parse(text, grid)
    h = ops.make_handle(d, sample_b(grid, rng))
    assert np.all(ops.apply_tb(h, Field.zeros(grid)).values == 0)


@pytest.mark.parametrize("text,grid", KINDS)
def test_pairing_identity(text, grid):
    rng = np.random.default_rng(hash(text) % 2**32)
    d = QuantityDescriptor.parse(text, grid)
    worst = 0.0
    for _ in range(50):
        b, w = sample_b(grid, rng), sample_w(d, rng)
        lhs = ops.apply_tb(ops.make_handle(d, b), w).inner(w)
        rhs = real_pairing(b, eval_quantity(d, w))
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    assert worst <= 1e-10


def test_make_handle_validation(rng):
    d = QuantityDescriptor("planar_jacobian", G2)
    with pytest.raises(ValueError):
        ops.make_handle(d, sample_b(G16, rng))
    with pytest.raises(ValueError):
        ops.make_handle(d, sample_b(G2, rng) * 1j)


@pytest.mark.parametrize("text,grid", KINDS)
def test_transpose_is_adjoint(text, grid, rng):
    d = QuantityDescriptor.parse(text, grid)
    h = ops.make_handle(d, sample_b(grid, rng))
    x, y = rng.standard_normal(h.dim), rng.standard_normal(h.dim)
    assert h.matvec(x) @ y == pytest.approx(x @ h.rmatvec(y), rel=1e-10)


# ---------------------------------------------------------------- self-adjointification


def test_self_adjointify_zero():
    t = ops.self_adjointify(ops.matrix_handle(np.zeros((3, 3))))
    assert np.all(t.matvec(np.ones(6)) == 0)
    assert ops.operator_norm(t).value == 0.0


@pytest.mark.parametrize("text,grid", [("paracommutator:wu_m1", G2), ("planar_jacobian", G2), ("line_q2", G1)])
def test_self_adjointify_pairing(text, grid, rng):
    d = QuantityDescriptor.parse(text, grid)
    h = ops.make_handle(d, sample_b(grid, rng))
    t = ops.self_adjointify(h)
    for _ in range(20):
        f, g = rng.standard_normal(h.dim), rng.standard_normal(h.dim)
        fg = np.concatenate([f, g])
        assert t.matvec(fg) @ fg == pytest.approx(2 * (h.matvec(f) @ g), rel=1e-10)


@pytest.mark.parametrize("make", [
    lambda rng: ops.real_jacobian_handle(sample_b(G16, rng)),
    lambda rng: ops.make_handle(QuantityDescriptor.parse("paracommutator:wu_m1", G16), sample_b(G16, rng)),
])
def test_self_adjointify_preserves_norm(make, rng):
    h = make(rng)
    ref = np.linalg.svd(ops.dense_matrix(h), compute_uv=False)[0]
    a = ops.operator_norm(h, tol=1e-12).value
    b = ops.operator_norm(ops.self_adjointify(h), tol=1e-12).value
    assert abs(a - ref) <= 1e-6 * ref and abs(b - ref) <= 1e-6 * ref


def test_self_adjointify_idempotent_in_norm(rng):
    G = rng.standard_normal((20, 20))
    h = ops.matrix_handle(G + G.T)
    a = ops.operator_norm(h, tol=1e-14).value
    b = ops.operator_norm(ops.self_adjointify(h), tol=1e-14).value
    assert abs(a - b) <= 1e-8 * a


# ---------------------------------------------------------------- spectral estimates


def test_operator_norm_small_cases():
    assert ops.operator_norm(ops.matrix_handle(np.zeros((4, 4)))).value == 0.0
    est = ops.operator_norm(ops.matrix_handle([[0.0, 1.0], [1.0, 0.0]]))
    assert abs(est.value - 1.0) <= 1e-8 and est.converged


def test_operator_norm_jacobian_single_mode():
    d = QuantityDescriptor("planar_jacobian", G16)
    h = ops.make_handle(d, single_mode_b(G16))
    ref = np.linalg.svd(ops.dense_matrix(h), compute_uv=False)[0]
    assert ops.operator_norm(h, tol=1e-12).value == pytest.approx(ref, rel=1e-6)


def test_numerical_radius_small_cases():
    assert ops.numerical_radius(ops.identity_handle(5)).value == pytest.approx(1.0, abs=1e-10)
    assert ops.numerical_radius(ops.matrix_handle(np.diag([1.0, -1.0]))).value == pytest.approx(1.0, abs=1e-10)
    assert ops.numerical_radius(ops.matrix_handle(np.diag([-3.0, 3.0]))).value == pytest.approx(3.0, abs=1e-9)


def test_numerical_radius_of_tilde_equals_norm(rng):
    h = ops.real_jacobian_handle(sample_b(G16, rng))
    t = ops.self_adjointify(h)
    r = ops.numerical_radius(t, tol=1e-12).value
    n = ops.operator_norm(t, tol=1e-12).value
    assert abs(r - n) <= 1e-6 * n


def test_top_symmetric_eigenvalue_matches_dense(rng):
    d = QuantityDescriptor("planar_jacobian", G16)
    h = ops.make_handle(d, sample_b(G16, rng))
    M = ops.dense_matrix(h)
    ref = np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
    est = ops.top_symmetric_eigenvalue(h)
    assert est.converged and est.value == pytest.approx(ref, rel=1e-9)
    assert ops.numerical_radius(h, tol=1e-12).value == pytest.approx(ref, rel=1e-6)


def test_dense_capacity():
    with pytest.raises(MemoryError):
        ops.dense_matrix(ops.identity_handle(10), capacity=5)


# ---------------------------------------------------------------- fixed space


def test_fixed_space_empty_below_one(rng):
    d = QuantityDescriptor("planar_jacobian", G16)
    b = sample_b(G16, rng)
    r = ops.numerical_radius(ops.make_handle(d, b), tol=1e-12).value
    assert ops.fixed_space(ops.make_handle(d, b * (0.5 / r))) == []


def test_fixed_space_findim_multiplicity_two():
    model = degenerate_chiral_model(2, 2, d=2, seed=1)
    vecs = ops.fixed_space(ops.matrix_handle(model.tb([1.0, 0.0])), 1e-8)
    assert len(vecs) == 2
    V = np.column_stack(vecs)
    assert np.max(np.abs(V.T @ V - np.eye(2))) <= 1e-8
    for v in vecs:
        assert np.dot([1.0, 0.0], model.quantity(v)) == pytest.approx(1.0, abs=1e-6)


def test_fixed_space_jacobian_pairing(rng):
    d = QuantityDescriptor("planar_jacobian", G16)
    b = sample_b(G16, rng, 4)
    M = ops.dense_matrix(ops.make_handle(d, b))
    b = b / np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
    vecs = ops.fixed_space(ops.make_handle(d, b), 1e-8)
    assert vecs
    for w in vecs:
        assert w.norm() == pytest.approx(1.0, abs=1e-12)
        assert real_pairing(b, eval_quantity(d, w)) == pytest.approx(1.0, abs=1e-6)


def test_fixed_space_rejects_non_self_adjoint():
    with pytest.raises(ValueError):
        ops.fixed_space(ops.matrix_handle([[0.0, 1.0], [0.0, 0.0]]))


# ---------------------------------------------------------------- invariants


@given(seeds)
def test_real_jacobian_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    h = ops.real_jacobian_handle(sample_b(G2, rng))
    f, g = rng.standard_normal(h.dim), rng.standard_normal(h.dim)
    lhs, rhs = h.matvec(f) @ g, -(f @ h.matvec(g))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)


def test_commutator_corpus_regression():
    raw = json.loads(resources.files("hardylab").joinpath("data", "commutator_corpus.json").read_text())
    assert len(raw["samples"]) == 20
    for s in raw["samples"]:
        g = GridSpec(s["dim"], s["n"], s["period"])
        b = random_bandlimited(g, np.random.default_rng(s["seed"]), s["kmax"], real=True, decay=s["decay"])
        h = ops.make_handle(QuantityDescriptor.parse(s["kind"], g), b)
        ratio = ops.operator_norm(h, tol=1e-10).value / bmo_norm(b)
        assert abs(ratio / s["ratio"] - 1) <= 0.10


def test_matrix_round_trip(tmp_path, rng):
    M = rng.standard_normal((7, 5))
    ops.write_matrix(tmp_path / "m.hqm", M)
    assert np.array_equal(ops.read_matrix(tmp_path / "m.hqm"), M)
    (tmp_path / "bad.hqm").write_bytes(b"HQF1" + bytes(16))
    with pytest.raises(ValueError):
        ops.read_matrix(tmp_path / "bad.hqm")
