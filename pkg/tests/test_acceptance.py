"""Acceptance criteria 1-12, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines inline;
they are also printed with output capture disabled.
"""

import time

import numpy as np
import pytest

from gramdyson.cli import main
from gramdyson.harness import SampleSpec, verify
from gramdyson.profile import random_profile, symmetrize, uniform, validate
from gramdyson.qve import density, solve_at, solve_gram_at
from gramdyson.stability import build_F, perron, phase_instance, ri_sweep, rotation_inversion_check
from gramdyson.zero import estimate_gap, expansion_at_zero, minimize_J, solve_hard_edge

import oracles


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def square_run():
    spec = SampleSpec(uniform(400, 400), "gaussian-real", seed=0, trials=50)
    t0 = time.perf_counter()
    rep = verify(spec, {"outlier_zone": (2.2, 10.0)}, threads=4)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def bulk_points():
    """20 bulk points over 3 random validated profiles, with solutions and operators."""
    rng = np.random.default_rng(3)
    out = []
    for p, n, k in ((200, 100, 7), (150, 150, 7), (300, 300, 6)):
        prof = random_profile(p, n, rng)
        assert validate(prof).primitivity is not None
        sym = symmetrize(prof)
        curve = density(prof, np.linspace(0.005, 4.2 * prof.s_star, 400))
        # interior quantiles of the continuous part keep the points in the bulk
        cdf = np.array([curve.cdf(x) for x in curve.grid])
        levels = curve.point_mass + (1 - curve.point_mass) * np.linspace(0.15, 0.85, k)
        for tau in np.interp(levels, cdf, curve.grid):
            sol = solve_gram_at(prof, tau + 1e-3j)
            assert sol.gram()[0].mean().imag / np.pi > 0.05
            out.append((sol, build_F(sym, sol)))
    assert len(out) == 20
    return out


def test_criterion_01_hard_edge_density(capsys):
    grid = np.linspace(0.05, 1.95, 2000)
    t0 = time.perf_counter()
    curve = density(uniform(200, 200), grid)
    dt = time.perf_counter() - t0
    err = np.abs(curve.values - oracles.square_density(grid)).max()
    report(capsys, 1, err <= 1e-3 and dt <= 60, f"sup error {err:.3g} (<= 1e-3), {dt:.1f} s (<= 60)")


def test_criterion_02_soft_edge(capsys):
    prof = uniform(400, 200)
    soft = minimize_J(prof)
    grid = np.linspace(0.001, 2.2, 2200)
    h = grid[1] - grid[0]
    dpi = estimate_gap(prof, grid=grid)
    errs = {
        "u": np.abs(soft.u - 0.5).max(),
        "sum u": abs(soft.u.sum() - (prof.p - prof.n)),
        "b(0)": np.abs(soft.b0 - 3).max(),
        "pi*": abs(soft.point_mass - 0.5),
        "delta_pi steps": abs(dpi - oracles.RECT_LO) / h,
    }
    ok = (errs["u"] <= 1e-8 and errs["sum u"] <= 1e-6 and errs["b(0)"] <= 1e-8
          and errs["pi*"] <= 1e-10 and errs["delta_pi steps"] <= 2)
    report(capsys, 2, ok, ", ".join(f"{k} {v:.3g}" for k, v in errs.items()))


def test_criterion_03_norm_identity(capsys, bulk_points):
    worst = max(perron(opr, sol, identity_tol=np.inf).identity_error for sol, opr in bulk_points)
    report(capsys, 3, worst <= 1e-8, f"max identity error {worst:.3g} over 20 points (<= 1e-8)")


def test_criterion_04_antisymmetry(capsys, bulk_points):
    worst = 0.0
    for sol, opr in bulk_points:
        pr = perron(opr, sol)
        worst = max(worst, np.linalg.norm(opr.apply(pr.f_minus) + pr.norm * pr.f_minus))
    report(capsys, 4, worst <= 1e-8, f"max antisymmetry residual {worst:.3g} (<= 1e-8)")


def test_criterion_05_rotation_inversion(capsys):
    res = rotation_inversion_check(phase_instance(0.0))
    equiv = res.singular == (res.rhs_core <= 1e-12) and res.singular
    rows, summary, bad = ri_sweep(10_000, 32, seed=0)
    finite = all(np.isfinite(r[4]) for r in rows if r[3] > 1e-12)
    top = max(summary.values())
    ok = equiv and finite and bad == 0 and len(rows) == 10_000
    report(capsys, 5, ok, f"phi=0 singular={res.singular} rhs_core={res.rhs_core:.3g}; "
                          f"{len(rows)} instances, max ratio {top:.4g}, counterexamples {bad}")


def test_criterion_06_expansion_at_zero(capsys):
    sym = symmetrize(uniform(200, 200))
    hard = solve_hard_edge(sym)
    rng = np.random.default_rng(6)
    C = 0.0
    for _ in range(50):
        r = rng.uniform(0.005, 0.05)
        z = r * np.exp(1j * np.pi * rng.uniform(0.1, 0.9))
        sol = solve_at(sym, z, tol=1e-13)
        C = max(C, np.abs(sol.m_sym - expansion_at_zero(sym, hard, z)).max() / r ** 2)
    report(capsys, 6, C <= 10, f"max error/|z|^2 = {C:.3g} over 50 points (<= 10)")


def test_criterion_07_local_law(capsys, square_run):
    rep, dt = square_run
    eta = 400 ** -0.4
    key = [k for k in rep.summary if k.startswith("entrywise@1+")]
    assert len(key) == 1 and abs(complex(key[0].split("@")[1].replace("i", "j")).imag - eta) < 1e-12
    ent = rep.summary[key[0]]["p95"]
    avg = rep.summary[key[0].replace("entrywise", "averaged")]["p95"]
    ok = ent <= 5 and avg <= 10 and dt <= 600
    report(capsys, 7, ok, f"p95 entrywise {ent:.3g} (<= 5), averaged {avg:.3g} (<= 10), "
                          f"{dt:.1f} s (<= 600)")


def test_criterion_08_rigidity(capsys, square_run):
    rep, _ = square_run
    med = rep.summary["rigidity@1"]["median"]
    report(capsys, 8, med <= 20, f"median p|lambda_i(1) - 1| = {med:.3g} (<= 20)")


def test_criterion_09_kernel_and_gap(capsys):
    spec = SampleSpec(uniform(300, 150), "gaussian-real", seed=0, trials=50)
    rep = verify(spec, threads=4)
    zc = [v for t, q, _, v in rep.records if q == "zero_count"]
    gv = [v for t, q, _, v in rep.records if q == "gap_violations"]
    ok = len(zc) == 50 and all(z == 150 for z in zc) and len(gv) == 50 and sum(gv) == 0
    report(capsys, 9, ok, f"kernel dims {sorted(set(zc))} over {len(zc)} trials, "
                          f"eigenvalues in gap zone {int(sum(gv))}")


def test_criterion_10_no_outliers(capsys, square_run):
    rep, _ = square_run
    out = [v for t, q, _, v in rep.records if q == "outliers"]
    top = rep.summary["max_eigenvalue"]["max"]
    ok = len(out) == 50 and sum(out) == 0
    report(capsys, 10, ok, f"eigenvalues in [2.2, 10]: {int(sum(out))}, largest {top:.4g}")


def test_criterion_11_capacity(capsys, square_run):
    rep, _ = square_run
    rel = rep.summary["capacity_rel_err"]
    det = rep.summary["capacity_det"]
    mc = rep.summary["capacity_mc"]
    report(capsys, 11, rel <= 0.02, f"deterministic {det:.6g}, Monte Carlo {mc:.6g}, "
                                    f"relative error {rel:.3g} (<= 0.02)")


def test_criterion_12_determinism(capsys, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        main(["verify", "--profile", "uniform:100:100", "--trials", "5", "--seed", "12",
              "--output", str(d)])
    capsys.readouterr()
    files = ("verify.json", "verify.csv", "verify_manifest.json")
    same = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() for f in files)
    report(capsys, 12, same, "two verify runs with seed 12 gave "
                             + ("identical" if same else "different") + " reports")
