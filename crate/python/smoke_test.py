"""Smoke test for the heat_sampling_py extension.

Build and install it first, e.g. `maturin develop --release -m crates/python/Cargo.toml`.
"""

import csv
import io
import math

import heat_sampling_py as hs


def main() -> None:
    u0 = hs.GaussianField(1, [(1.0, [0.0], 1.0)])
    assert u0.dim == 1
    # a single heat kernel of width s has squared norm (8πs)^{-1/2}
    assert math.isclose(u0.l2_norm(), (8 * math.pi) ** -0.25, rel_tol=1e-13)
    ut = u0.heat_evolve(1.0)
    assert math.isclose(ut.value([0.0]), (8 * math.pi) ** -0.5, rel_tol=1e-13)
    assert abs(u0.fourier([0.0]) - (2 * math.pi) ** -0.5) < 1e-15

    pair = hs.GaussianField.shape("pair", 1)
    assert hs.GaussianField.from_record(pair.to_record()).l2_norm() == pair.l2_norm()

    r = hs.residual(pair, 1.0, 2.0)
    assert r["bound"] == "residual" and r["asserted"] and r["holds"], r
    assert r["measured"] <= r["bound_rhs"]

    p = hs.perturbed_residual(pair, 1.0, 2.0, 0.1)
    assert p["holds"], p
    w = hs.windowed_residual(pair, 1.0, 2.0, 4.0, k=1)
    assert w["holds"], w
    c = hs.counterexample_gap(1, 1.0, 2.0, "constant:1")
    assert c["holds"], c
    h = hs.hs_residual(pair, 1.0, 2.0, 1)
    assert h["holds"], h

    text, code = hs.run_sweep('command = "observe"\nT = [1.0]\nN = [1.0, 2.0]\nfield = ["shape:unit"]\n')
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and len(rows) == 2, (code, text)
    assert all(row["status"] == "pass" for row in rows)

    try:
        hs.GaussianField.shape("blob", 1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown shapes must raise ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
