"""Smoke test for the bergman_lab extension module.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml && pip install target/wheels/bergman_lab-*.whl
"""

import math

import bergman_lab as bl


def main():
    zero = bl.Weight.zero()
    ev = bl.BergmanEvaluator(zero, 16)
    for z in (0j, 0.3 - 1.2j, 5 + 2j):
        assert abs(ev.kernel_diagonal([z]) - 17.0) < 1e-8, z
    assert abs(ev.trace() - 17.0) < 1e-8

    fam = bl.Weight.family(0.5)
    zeta_local, ratio = fam.curvature([0j])
    assert abs(zeta_local - 0.5) < 1e-6 and abs(ratio - 0.5) < 1e-6
    e32 = bl.BergmanEvaluator(fam, 32).near_diagonal_residual([0j])
    e64 = bl.BergmanEvaluator(fam, 64).near_diagonal_residual([0j])
    assert e64 < 0.8 * e32, (e32, e64)

    k = bl.model_kernel([2 * math.pi], [1 + 0j], [0j])
    assert abs(abs(k) - math.exp(-math.pi / 2)) < 1e-12

    gap = bl.gap_report(zero, 8)
    assert gap["kernel_dim"] == 9 and gap["converged"] and gap["ratio"] >= 0.9

    prof = bl.FilterProfile(0.5, 1.0)
    assert abs(prof.values[0] - 1) < 1e-10
    assert prof.projector_gap_bound(400) < prof.projector_gap_bound(25)

    c, alpha, r2 = bl.fit_power_law([(8, 1 / 8), (16, 1 / 16), (32, 1 / 32)])
    assert abs(alpha - 1) < 1e-10 and abs(c - 1) < 1e-10

    csv = bl.run_config('kind = "diagonal"\np = [8, 16]\n')
    assert csv.startswith("# bergman-lab") and csv.count("\n") == 4

    try:
        bl.Weight.family(1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("zeta outside (0, 1] must be rejected")

    print(f"bergman_lab {bl.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
