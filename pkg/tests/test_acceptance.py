"""Acceptance gate: one test per shipped guarantee.

Each test prints as its own pass/fail line under pytest -v.  Ladder
configurations are fixed; EOC windows and tolerances are part of the
contract, not tuning knobs.
"""

import time

import numpy as np
import pytest

from conftest import flat_grid, flat_pair, tube_points
from surfdg.assembly import (PenaltyParams, assemble_system, check_symmetry,
                             penalty_bounds, penalty_lower_bound)
from surfdg.dgspace import DgSpace
from surfdg.geometry import (eval_phi, get_surface, make_dziuk,
                             make_enzensberger_stern, make_sphere,
                             project_first_order, project_newton)
from surfdg.harness import HarnessError, RunConfig, run_convergence
from surfdg.mesh import initial_mesh, refine_uniform
from surfdg.solvers import SolverError, cg
from test_assembly import equilateral_pair, sympy_flat_pair_oracle


def terminal(report):
    row = report.rows[-1]
    return row.l2_eoc, row.dg_eoc


def test_criterion_01_dziuk_choice2_p1_rates():
    """Dziuk / Choice 2 / P1, 6 uniform refinements: L2-EOC 2, DG-EOC 1."""
    t0 = time.monotonic()
    report = run_convergence(RunConfig(surface="dziuk", choice=2, degree=1,
                                       refinements=6))
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0
    assert len(report.rows) == 7  # seed + 6 refinements
    assert report.rows[-1].elements >= 20000
    assert report.metadata["all_converged"]
    l2_eoc, dg_eoc = terminal(report)
    assert 1.9 <= l2_eoc <= 2.1
    assert 0.95 <= dg_eoc <= 1.05


def test_criterion_02_sphere_forcing_routes():
    """Sphere / Choice 2 / P1: same windows; generic-LB forcing tracks
    the closed-form f = 7 x1 x2 within 5% in L2 on every level."""
    analytic = run_convergence(RunConfig(surface="sphere", refinements=5,
                                         forcing="analytic"))
    generic = run_convergence(RunConfig(surface="sphere", refinements=5,
                                        forcing="generic-LB"))
    for report in (analytic, generic):
        l2_eoc, dg_eoc = terminal(report)
        assert 1.9 <= l2_eoc <= 2.1
        assert 0.95 <= dg_eoc <= 1.05
    for ea, eg in zip(analytic.l2_errors, generic.l2_errors):
        assert abs(ea - eg) <= 0.05 * ea


def test_criterion_03_enzensberger_stern_rates():
    """Enzensberger-Stern / Choice 2 / P1 from a scaled octahedron seed;
    wider windows cover the erratic preasymptotics."""
    t0 = time.monotonic()
    report = run_convergence(RunConfig(surface="enzensberger-stern",
                                       seed="octahedron", seed_scale=1.25,
                                       refinements=7))
    elapsed = time.monotonic() - t0
    assert elapsed <= 300.0
    assert report.rows[-1].elements >= 100000
    assert report.metadata["all_converged"]
    l2_eoc, dg_eoc = terminal(report)
    assert 1.8 <= l2_eoc <= 2.3
    assert 0.9 <= dg_eoc <= 1.15


def test_criterion_04_nonconforming_dziuk_rates():
    """Hanging-node ladder: refine the x1 > 0 half first, then uniformly."""
    report = run_convergence(RunConfig(surface="dziuk", refinements=6,
                                       nonconforming=True,
                                       marking="halfspace-x"))
    assert report.metadata["marking"] == "halfspace-x"
    l2_eoc, dg_eoc = terminal(report)
    assert 1.85 <= l2_eoc <= 2.15
    assert 0.95 <= dg_eoc <= 1.05


def test_criterion_05_quadratic_basis_dziuk_rates():
    """Dziuk / Choice 3 / P2: both norms converge at second order."""
    report = run_convergence(RunConfig(surface="dziuk", choice=3, degree=2,
                                       refinements=6))
    l2_eoc, dg_eoc = terminal(report)
    assert 1.9 <= l2_eoc <= 2.1
    assert 1.9 <= dg_eoc <= 2.1


def test_criterion_06_flat_equivalence():
    """All substitution choices coincide entrywise on flat meshes."""
    for mesh in (flat_pair(), flat_grid(8)):
        space = DgSpace(mesh, 1)
        pen = PenaltyParams(sigma=2.0)
        mats = {c: assemble_system(space, c, pen).matrix.toarray()
                for c in ("1", "2", "3", "4")}
        scale = np.abs(mats["2"]).max()
        for c in ("1", "3", "4"):
            assert np.abs(mats[c] - mats["2"]).max() <= 1e-12 * scale


def test_criterion_07_symmetry_and_spd():
    """Choices 2/3/4 assemble symmetric matrices on every test mesh and
    CG converges at twice the penalty bound; Choice 1 is measurably
    non-symmetric on curved meshes."""
    sph, dz, es = make_sphere(), make_dziuk(), make_enzensberger_stern()
    meshes = [
        flat_pair(), flat_grid(8),
        refine_uniform(initial_mesh(sph, "icosahedron"), sph),
        refine_uniform(initial_mesh(dz, "icosahedron"), dz),
        refine_uniform(initial_mesh(es, "octahedron", scale=1.25), es),
    ]
    rng = np.random.default_rng(23)
    for mesh in meshes:
        space = DgSpace(mesh, 1)
        omega = 2.0 * penalty_bounds(mesh).max()
        for choice in ("2", "3", "4"):
            system = assemble_system(space, choice,
                                     PenaltyParams(omega=omega))
            scale = np.abs(system.matrix.data).max()
            assert check_symmetry(system) <= 1e-12 * scale
            b = rng.standard_normal(space.total_dofs)
            report = cg(system, b, tol=1e-10, precond="jacobi")
            assert report.converged
            assert report.final_relative_residual <= 1e-10
    # curved mesh: the one-sided choice loses symmetry at O(h)
    curved = meshes[2]
    system = assemble_system(DgSpace(curved, 1), "1", PenaltyParams(sigma=2.0))
    assert check_symmetry(system) > 1e-8 * np.abs(system.matrix.data).max()


def test_criterion_08_penalty_bound_oracle():
    eq = equilateral_pair()
    assert penalty_lower_bound(eq, eq.edges[0]) == pytest.approx(
        2.0 * np.sqrt(3.0), abs=1e-12)
    iso = flat_pair()
    assert penalty_lower_bound(iso, iso.edges[0]) == pytest.approx(
        4.0, abs=1e-12)


def test_criterion_09_projection_suite():
    """100 tube points per surface: both projections certified below
    1e-10 (or the documented fallback pinned to phi = 0) and mutually
    consistent to 1e-8."""
    for name in ("sphere", "dziuk", "enzensberger-stern"):
        surf = get_surface(name)
        for p in tube_points(surf, n=100, seed=42):
            a = project_first_order(surf, p, tol=1e-10)
            b = project_newton(surf, p, tol=1e-10)
            assert np.linalg.norm(a.point - b.point) <= 1e-8
            for r in (a, b):
                if r.residual >= 1e-10:
                    assert abs(eval_phi(surf, r.point)) < 1e-10


def test_criterion_10_assembly_oracle():
    mesh = flat_pair()
    A = assemble_system(DgSpace(mesh, 1), 2,
                        PenaltyParams(omega=8.0)).matrix.toarray()
    assert np.abs(A - sympy_flat_pair_oracle(omega=8.0)).max() <= 1e-12


def test_criterion_11_tangential_variant_fails():
    """Choice 4T drops the consistency coupling; the ladder must either
    break down in the solver or stall below first order in L2."""
    try:
        report = run_convergence(RunConfig(surface="dziuk", choice="4T",
                                           refinements=4))
    except (HarnessError, SolverError):
        return  # breakdown counts as the documented failure mode
    l2_eoc, _ = terminal(report)
    assert l2_eoc is None or l2_eoc < 1.0  # measured -0.58
