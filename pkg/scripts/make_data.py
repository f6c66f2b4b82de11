"""Regenerate the data files shipped in src/hardylab/data.

Run from the repository root:  python3 scripts/make_data.py
Every file is a deterministic function of the seeds below.
"""

import json
from pathlib import Path

import numpy as np

from hardylab import operators as ops
from hardylab.norms import bmo_norm
from hardylab.quantities import QuantityDescriptor, eval_quantity
from hardylab.spectral_core import Field, GridSpec, random_bandlimited, write_field

DATA = Path(__file__).resolve().parents[1] / "src" / "hardylab" / "data"


def certified(kind, grid, seed, kmax):
    """Eigen-constructed pair: b scaled to top eigenvalue 1, w a unit fixed vector, f = Q(w)."""
    d = QuantityDescriptor.parse(kind, grid)
    b = random_bandlimited(grid, np.random.default_rng(seed), kmax, real=True)
    M = ops.dense_matrix(ops.make_handle(d, b))
    top = np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
    b = b / top
    w = ops.fixed_space(ops.make_handle(d, b), 1e-8)[0]
    return d, b, w, eval_quantity(d, w)


def main():
    DATA.mkdir(exist_ok=True)
    instances = []

    g16 = GridSpec(2, 16)
    d, b, w, f = certified("planar_jacobian", g16, 5, 4)
    write_field(DATA / "jacobian_n16.hqf", f)
    write_field(DATA / "jacobian_n16_b.hqf", b)
    instances.append({"name": "jacobian_n16", "kind": "planar_jacobian", "data": "jacobian_n16.hqf",
                      "multiplier": "jacobian_n16_b.hqf", "certified": True, "energy": w.norm() ** 2})

    w0 = random_bandlimited(g16, np.random.default_rng(11), 3) * 0.2
    write_field(DATA / "jacobian_feasible_n16.hqf", eval_quantity(d, w0))
    instances.append({"name": "jacobian_feasible_n16", "kind": "planar_jacobian",
                      "data": "jacobian_feasible_n16.hqf", "certified": False, "energy": w0.norm() ** 2})

    g64 = GridSpec(1, 64)
    d, b, w, f = certified("line_q1", g64, 8, 12)
    write_field(DATA / "line_q1_n64.hqf", f)
    write_field(DATA / "line_q1_n64_b.hqf", b)
    instances.append({"name": "line_q1_n64", "kind": "line_q1", "data": "line_q1_n64.hqf",
                      "multiplier": "line_q1_n64_b.hqf", "certified": True, "energy": w.norm() ** 2})
    (DATA / "instances.json").write_text(json.dumps({"instances": instances}, indent=1, sort_keys=True) + "\n")

    # commutator corpus: dense largest singular value over dyadic BMO
    corpus = []
    specs = [("line_q2", 1, 64, 2 * np.pi, s) for s in range(10)] + [("planar_jacobian", 2, 16, 2 * np.pi, s) for s in range(10)]
    for kind, dim, n, period, seed in specs:
        grid = GridSpec(dim, n, period)
        kmax = n // 4
        b = random_bandlimited(grid, np.random.default_rng(1000 + seed), kmax, real=True, decay=1.0)
        M = ops.dense_matrix(ops.make_handle(QuantityDescriptor.parse(kind, grid), b))
        norm = np.linalg.svd(M, compute_uv=False)[0]
        corpus.append({"kind": kind, "dim": dim, "n": n, "period": period, "seed": 1000 + seed, "kmax": kmax,
                       "decay": 1.0, "operator_norm": float(norm), "bmo": bmo_norm(b),
                       "ratio": float(norm / bmo_norm(b))})
    (DATA / "commutator_corpus.json").write_text(json.dumps({"samples": corpus}, indent=1, sort_keys=True) + "\n")
    for f in sorted(DATA.iterdir()):
        print(f.name, f.stat().st_size)


if __name__ == "__main__":
    main()
