import numpy as np
import pytest
from hypothesis import given, strategies as st

from hardylab.factorization import (
    FactorizationError,
    RationalHalfPlaneFunction,
    blaschke,
    factorize,
    find_zeros,
    hilbert_defect,
    load_rational_corpus,
    poisson_extend,
    square_attempt,
    square_certificate,
    winding_number,
)
from hardylab.spectral_core import Field, GridSpec

GRID, CORPUS = load_rational_corpus()
BY_NAME = dict(CORPUS)
TOL = 1e-6

# frozen corpus expectations: (zero degree, is_square)
EXPECTED = {
    "closed_form": (0, True),
    "odd_zero": (1, False),
    "double_zero": (2, True),
    "pole_pair": (0, True),
    "shifted_zero": (1, False),
    "two_odd_zeros": (2, False),
    "triple_zero": (3, False),
    "mixed_parity": (3, False),
    "near_axis_zero": (1, False),
    "far_double_zero": (2, True),
    "rotated_scale": (0, True),
    "odd_zero_with_pair": (3, False),
}

ODD = RationalHalfPlaneFunction(((1j, 1),), ((-1j, 3),))
ZERO_FREE = RationalHalfPlaneFunction((), ((-1j, 2),))
DOUBLE = RationalHalfPlaneFunction(((2j, 2),), ((-2j, 2), (-1j, 3)))


def l2(a, g):
    return np.sqrt(np.sum(np.abs(a) ** 2) * g.cell)


# ---------------------------------------------------------------- rational type


def test_rational_validation_and_json():
    with pytest.raises(ValueError):
        RationalHalfPlaneFunction(((1j, 1),), ((-1j, 1),))
    with pytest.raises(ValueError):
        RationalHalfPlaneFunction(((-1j, 1),), ((-1j, 3),))
    with pytest.raises(ValueError):
        RationalHalfPlaneFunction((), ((1j, 2),))
    with pytest.raises(ValueError):
        RationalHalfPlaneFunction.from_json({"zeros": []})
    for _, U in CORPUS:
        assert RationalHalfPlaneFunction.from_json(U.to_json()) == U
        assert U.in_h1


# ---------------------------------------------------------------- poisson_extend


def test_poisson_single_mode():
    g = GridSpec(1, 128, 10.0)
    x = g.axis()
    k = 2 * np.pi / g.period
    y = g.period / g.n
    p, q = poisson_extend(Field(g, np.cos(k * x)), y)
    decay = np.exp(-k * y)
    assert np.max(np.abs(p.values - decay * np.cos(k * x))) <= 1e-12
    assert np.max(np.abs(q.values - decay * np.sin(k * x))) <= 1e-12
    # within the stated distance of the boundary pair
    assert np.max(np.abs(p.values - np.cos(k * x))) <= 1 - decay + 1e-12


def test_poisson_zero_and_validation():
    g = GridSpec(1, 64)
    p, q = poisson_extend(Field.zeros(g), 0.5)
    assert np.all(p.values == 0) and np.all(q.values == 0)
    with pytest.raises(ValueError):
        poisson_extend(Field.zeros(g), 0.0)


def test_poisson_rational_continuation():
    # Re 1/(x+i) on a large period; the grid mean is removed (its unpaired tail)
    g = GridSpec(1, 16384, 2048.0)
    x = g.axis()
    v = (1 / (x + 1j)).real
    p, _ = poisson_extend(Field(g, v - v.mean()), 1.0)
    ref = (1 / (x + 2j)).real
    win = np.abs(x) <= 16
    assert np.max(np.abs(p.values.real - ref)[win]) <= 1e-6 * np.abs(ref).max()


# ---------------------------------------------------------------- zeros


def test_find_zeros_examples():
    z = find_zeros(ODD, method="winding")
    assert len(z) == 1 and abs(z[0][0] - 1j) <= 1e-5 and z[0][1] == 1
    assert find_zeros(ZERO_FREE, method="winding") == []
    z = find_zeros(DOUBLE, method="winding")
    assert len(z) == 1 and abs(z[0][0] - 2j) <= 1e-5 and z[0][1] == 2


def test_winding_count_quadrature():
    assert winding_number(DOUBLE, -3, 3, 0.5, 3) == 2
    assert winding_number(DOUBLE, -3, 3, 2.5, 3) == 0
    assert winding_number(ODD, -3, 3, 0.5, 3) == 1


def test_find_zeros_validation():
    with pytest.raises(ValueError):
        find_zeros(lambda z: z, box=(0, 1, -1, 1))
    with pytest.raises(ValueError):
        find_zeros(lambda z: z)
    with pytest.raises(FactorizationError):
        find_zeros(lambda z: 1 / (z - 0.5j), box=(-1, 1, 0.1, 1))


def test_square_certificate_examples():
    assert square_certificate(ZERO_FREE) == (True, [])
    ok, rep = square_certificate(DOUBLE)
    assert ok and rep[0][2] == "even"
    ok, rep = square_certificate(ODD)
    assert not ok and rep[0][2] == "odd"


@given(st.floats(-5, 5), st.floats(0.2, 5), st.sampled_from(sorted(EXPECTED)))
def test_parity_invariant_under_pair_insertion(re, im, name):
    U = BY_NAME[name]
    a = complex(re, im)
    assert square_certificate(U.with_pair(a))[0] == square_certificate(U)[0]


# ---------------------------------------------------------------- factorize


def test_closed_form():
    x = GRID.axis()
    r = factorize(BY_NAME["closed_form"], tol=TOL, grid=GRID)
    ref = x / (x**2 + 1)
    assert r.is_square and r.blaschke_degree == 0
    assert r.residual_l1 <= 1e-8
    for part in (r.omega, r.gamma):
        assert l2(part.values.real - ref, GRID) <= 1e-6 * l2(ref, GRID)
    f = BY_NAME["closed_form"].boundary(GRID).values.real
    assert np.max(np.abs(f - (x**2 - 1) / (x**2 + 1) ** 2)) <= 1e-14


def test_factorize_zero():
    r = factorize(Field.zeros(GridSpec(1, 64)))
    assert np.all(r.omega.values == 0) and np.all(r.gamma.values == 0)


def test_odd_zero_counterexample():
    U = BY_NAME["odd_zero"]
    r = factorize(U, tol=TOL, grid=GRID)
    assert not r.is_square and r.blaschke_degree == 1
    assert r.residual_l1 <= TOL
    _, err = square_attempt(U, GRID)
    assert err >= 0.1
    # control: the zero-free square root does recombine
    _, err0 = square_attempt(BY_NAME["closed_form"], GRID)
    assert err0 < 0.1


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus(name):
    U = BY_NAME[name]
    r = factorize(U, tol=TOL, grid=GRID)
    degree, square = EXPECTED[name]
    assert r.residual_l1 <= TOL
    assert r.blaschke_degree == degree and r.is_square == square
    x = GRID.axis()
    assert np.max(np.abs(np.abs(blaschke(U.zeros)(x.astype(complex))) - 1)) <= 1e-10
    # every 8th sample keeps the direct conjugate-function sum affordable
    assert hilbert_defect(r.V, x[::8]) <= 1e-6
    assert hilbert_defect(r.W, x[::8]) <= 1e-6
    f1 = np.abs(U.boundary(GRID).values).sum() * GRID.cell
    assert l2(r.omega.values, GRID) * l2(r.gamma.values, GRID) >= f1 / 2 - TOL


def test_factorize_rejects_bad_input():
    with pytest.raises(ValueError):
        factorize(ODD)
    with pytest.raises(ValueError):
        factorize(Field(GridSpec(1, 64), np.ones(64) * 1j))
    with pytest.raises(TypeError):
        factorize(np.ones(8))


# ---------------------------------------------------------------- sampled path


@pytest.mark.parametrize("q", [0.5, 0.3 + 0.2j])
def test_sampled_simple_zero(q):
    # periodic data Re U with U = e^{iz}(e^{iz} - q): one zero at -i log q
    g = GridSpec(1, 256)
    x = g.axis()
    u = np.exp(1j * x) * (np.exp(1j * x) - q)
    r = factorize(Field(g, u.real), tol=TOL, levels=4)
    assert r.residual_l1 <= 1e-7
    assert len(r.zero_report) == 1 and r.zero_report[0][1] == 1
    z = -1j * np.log(q)
    assert abs(r.zero_report[0][0] - z) <= 1e-5
    assert not r.is_square


def test_sampled_double_zero_is_square():
    g = GridSpec(1, 256)
    x = g.axis()
    u = np.exp(1j * x) * (np.exp(1j * x) - 0.5) ** 2
    r = factorize(Field(g, u.real), tol=TOL, levels=4)
    assert r.is_square and r.zero_report[0][1] == 2
    assert r.residual_l1 <= 1e-7


def test_sampled_levels_floor():
    # two-level extrapolation stops near (k eps)^2; recorded, not a tolerance
    g = GridSpec(1, 256)
    x = g.axis()
    u = np.exp(1j * x) * (np.exp(1j * x) - 0.5)
    r2 = factorize(Field(g, u.real), tol=1.0, levels=2)
    r4 = factorize(Field(g, u.real), tol=1.0, levels=4)
    assert r4.residual_l1 < r2.residual_l1 <= 1e-3
