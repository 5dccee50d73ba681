"""Convergence driver: refinement ladders, error norms, EOC tables,
CSV/VTK output and cross-choice comparisons."""

import os
import time
from contextlib import nullcontext
from dataclasses import dataclass, field, fields

import numpy as np

from .assembly import (PenaltyParams, assemble_rhs, assemble_system,
                       normalize_choice)
from .dgspace import DgFunction, DgSpace, _ref_grads, _values, get_quadrature
from .geometry import project_points
from .mesh import (SurfaceMesh, initial_mesh, mesh_width,
                   refine_nonconforming, refine_uniform)
from .problems import TestProblem, exact_u_on_gammah, make_problem
from .solvers import SolveReport, bicgstab, cg

MARKINGS = ("halfspace-x", "all")


class HarnessError(RuntimeError):
    pass


def _thread_cap():
    """Context manager capping BLAS threads from SURFDG_THREADS."""
    n = os.environ.get("SURFDG_THREADS")
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=int(n))
    except ImportError:
        return nullcontext()


@dataclass
class RunConfig:
    surface: str = "dziuk"
    choice: object = 2
    degree: int = 1
    refinements: int = 6
    seed: str = "icosahedron"
    seed_scale: float = 1.0
    sigma: float = 2.0
    solver: str = "auto"
    tol: float = 1e-10
    nonconforming: bool = False
    marking: str = "halfspace-x"
    forcing: str | None = None
    output_csv: str | None = None
    output_vtk: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise HarnessError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def __post_init__(self):
        self.choice = normalize_choice(self.choice)
        if self.degree not in (1, 2):
            raise HarnessError(f"degree must be 1 or 2, got {self.degree}")
        if self.refinements < 1:
            raise HarnessError("need at least one refinement for an EOC")
        if self.marking not in MARKINGS:
            raise HarnessError(f"unknown marking {self.marking!r}")
        if self.solver not in ("auto", "cg", "bicgstab"):
            raise HarnessError(f"unknown solver {self.solver!r}")


@dataclass
class ConvergenceRow:
    elements: int
    h: float
    l2_error: float
    l2_eoc: float | None
    dg_error: float
    dg_eoc: float | None
    solver_converged: bool = True
    solver_iterations: int = 0


@dataclass
class ConvergenceReport:
    rows: list
    metadata: dict = field(default_factory=dict)

    @property
    def l2_errors(self):
        return [r.l2_error for r in self.rows]

    @property
    def dg_errors(self):
        return [r.dg_error for r in self.rows]

    @property
    def hs(self):
        return [r.h for r in self.rows]


def compute_eoc(errors, hs) -> list:
    """eoc_k = ln(e_{k-1}/e_k) / ln(h_{k-1}/h_k); first entry None, as is
    any entry whose error pair is not positive."""
    if len(errors) != len(hs):
        raise HarnessError("errors and hs must have equal length")
    if len(errors) < 2:
        raise HarnessError("need at least two levels")
    out = [None]
    for k in range(1, len(errors)):
        if errors[k - 1] <= 0.0 or errors[k] <= 0.0:
            out.append(None)
            continue
        out.append(float(np.log(errors[k - 1] / errors[k])
                         / np.log(hs[k - 1] / hs[k])))
    return out


def _element_geometry(mesh: SurfaceMesh):
    tv = mesh.triangle_vertices()
    jac = np.stack([tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]], axis=2)
    gram = np.einsum("mda,mdb->mab", jac, jac)
    det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] * gram[:, 1, 0]
    inv = np.empty_like(gram)
    inv[:, 0, 0] = gram[:, 1, 1]
    inv[:, 1, 1] = gram[:, 0, 0]
    inv[:, 0, 1] = -gram[:, 0, 1]
    inv[:, 1, 0] = -gram[:, 1, 0]
    inv /= det[:, None, None]
    tmap = np.einsum("mab,mdb->mad", inv, jac)
    areas = 0.5 * np.sqrt(det)
    normals = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return tv, tmap, areas, normals


def compute_errors(u_h: DgFunction, problem: TestProblem) -> tuple:
    """(L2, DG) errors of u_h against the lifted exact solution.

    Both norms are evaluated on the discrete surface with a degree-6
    triangle rule; the broken-H1 gradient term compares the discrete
    tangential gradient against the exact surface gradient projected
    into the element plane, and the jump term carries weight 1/h_e.
    """
    space = u_h.space
    mesh = space.mesh
    deg = space.degree
    rule = get_quadrature("triangle", 6)
    tv, tmap, areas, normals = _element_geometry(mesh)
    w = rule.weights
    pts = np.einsum("qk,mkd->mqd", rule.points, tv)
    m, q = pts.shape[:2]
    exact_val, exact_tang = exact_u_on_gammah(problem, pts.reshape(-1, 3))
    exact_val = exact_val.reshape(m, q)
    # project the exact surface gradient into the element plane
    exact_tang = exact_tang.reshape(m, q, 3)
    exact_tang = exact_tang - np.einsum(
        "mqd,md->mq", exact_tang, normals)[:, :, None] * normals[:, None, :]

    coeff = u_h.coefficients.reshape(m, space.dofs_per_element)
    vref = _values(deg, rule.points)
    gref = _ref_grads(deg, rule.points)
    gphys = np.einsum("qna,mad->mqnd", gref, tmap)
    uh_val = np.einsum("mi,qi->mq", coeff, vref)
    uh_grad = np.einsum("mi,mqid->mqd", coeff, gphys)

    diff = uh_val - exact_val
    l2_sq = np.sum(2.0 * areas[:, None] * w[None, :] * diff**2)
    gdiff = uh_grad - exact_tang
    h1_sq = np.sum(2.0 * areas[:, None] * w[None, :]
                   * np.einsum("mqd,mqd->mq", gdiff, gdiff))

    # jump seminorm: the lifted exact solution is single valued, so only
    # u_h jumps across intersections
    if mesh.edges is None:
        raise HarnessError("mesh edges not built")
    edges = mesh.edges
    seg = get_quadrature("segment", 6)
    p0, p1 = edges.endpoints[:, 0], edges.endpoints[:, 1]
    x = p0[:, None, :] + seg.points[None, :, None] * (p1 - p0)[:, None, :]

    def side_vals(elems):
        v0 = tv[elems, 0]
        xi = np.einsum("ead,ekd->eka", tmap[elems], x - v0[:, None, :])
        lam = np.empty(xi.shape[:2] + (3,))
        lam[..., 1:] = xi
        lam[..., 0] = 1.0 - xi.sum(axis=-1)
        return np.einsum("ei,eki->ek", coeff[elems], _values(deg, lam))

    jump = side_vals(edges.plus) - side_vals(edges.minus)
    # weights: w_k * |e| per point, then the 1/h_e jump factor
    jump_sq = np.sum(seg.weights[None, :] * jump**2, axis=1)
    star_sq = np.sum(jump_sq)  # lengths cancel: |e| * (1/|e|)
    dg_sq = l2_sq + h1_sq + star_sq
    return float(np.sqrt(l2_sq)), float(np.sqrt(dg_sq))


def compute_l2_error(u_h: DgFunction, problem: TestProblem) -> float:
    return compute_errors(u_h, problem)[0]


def compute_dg_error(u_h: DgFunction, problem: TestProblem) -> float:
    return compute_errors(u_h, problem)[1]


def _solve_level(space, choice, penalty, rhs, solver, tol) -> SolveReport:
    system = assemble_system(space, choice, penalty)
    if solver == "auto":
        solver = "bicgstab" if choice == "1" else "cg"
    fn = cg if solver == "cg" else bicgstab
    return fn(system, rhs, tol=tol, precond="jacobi")


def _marked_halfspace(mesh: SurfaceMesh):
    cent = mesh.triangle_vertices().mean(axis=1)
    idx = np.flatnonzero(cent[:, 0] > 0.0)
    return idx.tolist()


def _build_ladder_step(mesh, surface, cfg: RunConfig, step: int):
    if not cfg.nonconforming:
        return refine_uniform(mesh, surface)
    if cfg.marking == "halfspace-x" and step == 0:
        marked = _marked_halfspace(mesh)
    else:
        marked = list(range(len(mesh.triangles)))
    return refine_nonconforming(mesh, marked, surface)


def run_convergence(config) -> ConvergenceReport:
    """Seed, then per level: assemble, solve, measure, refine.

    Rows cover the seed mesh and every refinement.  A solver that stops
    without reaching tolerance flags its row and the ladder continues;
    hard assembly or projection failures abort with the stage named.
    """
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(
        dict(config))
    problem = make_problem(cfg.surface, forcing_mode=cfg.forcing)
    surface = problem.surface
    penalty = PenaltyParams(sigma=cfg.sigma)

    with _thread_cap():
        try:
            mesh = initial_mesh(surface, cfg.seed, scale=cfg.seed_scale)
        except Exception as e:
            raise HarnessError(f"seed stage failed: {e}") from e

        rows = []
        meta_levels = []
        for level in range(cfg.refinements + 1):
            space = DgSpace(mesh, cfg.degree)
            t0 = time.monotonic()
            try:
                rhs = assemble_rhs(space, surface, problem.f)
                report = _solve_level(space, cfg.choice, penalty, rhs,
                                      cfg.solver, cfg.tol)
            except Exception as e:
                raise HarnessError(
                    f"assemble/solve stage failed at level {level}: {e}"
                ) from e
            u_h = DgFunction(space, report.solution)
            try:
                l2, dg = compute_errors(u_h, problem)
            except Exception as e:
                raise HarnessError(
                    f"error stage failed at level {level}: {e}") from e
            rows.append(ConvergenceRow(
                elements=len(mesh.triangles), h=mesh_width(mesh),
                l2_error=l2, l2_eoc=None, dg_error=dg, dg_eoc=None,
                solver_converged=report.converged,
                solver_iterations=report.iterations))
            meta_levels.append({
                "level": level, "dofs": space.total_dofs,
                "iterations": report.iterations,
                "residual": report.final_relative_residual,
                "seconds": time.monotonic() - t0})
            if level < cfg.refinements:
                try:
                    mesh = _build_ladder_step(mesh, surface, cfg, level)
                except Exception as e:
                    raise HarnessError(
                        f"refine stage failed after level {level}: {e}"
                    ) from e

    l2_eocs = compute_eoc([r.l2_error for r in rows], [r.h for r in rows])
    dg_eocs = compute_eoc([r.dg_error for r in rows], [r.h for r in rows])
    for r, le, de in zip(rows, l2_eocs, dg_eocs):
        r.l2_eoc, r.dg_eoc = le, de

    report = ConvergenceReport(rows=rows, metadata={
        "surface": cfg.surface, "choice": cfg.choice, "degree": cfg.degree,
        "sigma": cfg.sigma, "solver": cfg.solver, "tol": cfg.tol,
        "seed": cfg.seed, "seed_scale": cfg.seed_scale,
        "nonconforming": cfg.nonconforming,
        "marking": cfg.marking if cfg.nonconforming else None,
        "forcing": problem.forcing_mode,
        "levels": meta_levels,
        "all_converged": all(r.solver_converged for r in rows)})
    if cfg.output_csv:
        write_csv(report, cfg.output_csv)
    if cfg.output_vtk:
        export_vtk(mesh, u_h, cfg.output_vtk)
    return report


@dataclass
class ChoiceComparison:
    """Per level and choice: error ratios against Choice 2."""

    choices: list
    elements: list
    hs: list
    l2_errors: dict
    dg_errors: dict

    def ratios(self, choice) -> list:
        tag = normalize_choice(choice)
        return [(l / lr, d / dr) for l, d, lr, dr in zip(
            self.l2_errors[tag], self.dg_errors[tag],
            self.l2_errors["2"], self.dg_errors["2"])]


def compare_choices(config, choices) -> ChoiceComparison:
    """Run the same ladder for several conormal choices; Choice 2 is the
    reference and is added when missing.

    The solver is picked per choice (BiCGSTAB for the non-symmetric
    Choice 1, CG otherwise); a single configured solver cannot serve
    both symmetry classes in one comparison.
    """
    tags = [normalize_choice(c) for c in choices]
    if len(tags) < 2:
        raise HarnessError("need at least two choices to compare")
    if "2" not in tags:
        tags.append("2")
    cfg = config if isinstance(config, RunConfig) else RunConfig.from_dict(
        dict(config))
    problem = make_problem(cfg.surface, forcing_mode=cfg.forcing)
    surface = problem.surface
    penalty = PenaltyParams(sigma=cfg.sigma)

    l2 = {t: [] for t in tags}
    dg = {t: [] for t in tags}
    elements, hs = [], []
    with _thread_cap():
        mesh = initial_mesh(surface, cfg.seed, scale=cfg.seed_scale)
        for level in range(cfg.refinements + 1):
            space = DgSpace(mesh, cfg.degree)
            rhs = assemble_rhs(space, surface, problem.f)
            elements.append(len(mesh.triangles))
            hs.append(mesh_width(mesh))
            for tag in tags:
                report = _solve_level(space, tag, penalty, rhs,
                                      "auto", cfg.tol)
                e2, ed = compute_errors(DgFunction(space, report.solution),
                                        problem)
                l2[tag].append(e2)
                dg[tag].append(ed)
            if level < cfg.refinements:
                mesh = _build_ladder_step(mesh, surface, cfg, level)
    return ChoiceComparison(choices=tags, elements=elements, hs=hs,
                            l2_errors=l2, dg_errors=dg)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6g}"


def write_csv(report: ConvergenceReport, path) -> None:
    """Six-significant-digit CSV; EOC cells blank where undefined."""
    lines = ["elements,h,l2_error,l2_eoc,dg_error,dg_eoc"]
    for r in report.rows:
        lines.append(",".join([str(r.elements), _fmt(r.h), _fmt(r.l2_error),
                               _fmt(r.l2_eoc), _fmt(r.dg_error),
                               _fmt(r.dg_eoc)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_vtk(mesh: SurfaceMesh, u_h: DgFunction, path) -> None:
    """Legacy ASCII VTK with dof-averaged point data and element means."""
    if u_h.space.mesh is not mesh:
        raise HarnessError("u_h does not live on the given mesh")
    space = u_h.space
    nv = len(mesh.vertices)
    m = len(mesh.triangles)
    coeff = u_h.coefficients.reshape(m, space.dofs_per_element)

    vert_sum = np.zeros(nv)
    vert_cnt = np.zeros(nv)
    for loc in range(3):  # corner dofs only carry vertex values
        np.add.at(vert_sum, mesh.triangles[:, loc], coeff[:, loc])
        np.add.at(vert_cnt, mesh.triangles[:, loc], 1.0)
    point_vals = vert_sum / np.maximum(vert_cnt, 1.0)

    rule = get_quadrature("triangle", 4 if space.degree == 1 else 6)
    vref = _values(space.degree, rule.points)
    # mean = (1/|K|) int u_h = (1/|K|) 2|K| sum w u; areas cancel
    cell_means = 2.0 * np.einsum("q,mi,qi->m", rule.weights, coeff, vref)

    out = ["# vtk DataFile Version 3.0", "surfdg solution", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    out += [f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}" for p in mesh.vertices]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {t[0]} {t[1]} {t[2]}" for t in mesh.triangles]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    out.append(f"POINT_DATA {nv}")
    out += ["SCALARS u double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.16g}" for v in point_vals]
    out.append(f"CELL_DATA {m}")
    out += ["SCALARS u_mean double 1", "LOOKUP_TABLE default"]
    out += [f"{v:.16g}" for v in cell_means]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_vtk_counts(path) -> tuple:
    """Minimal self-parse of our VTK output: (points, cells)."""
    npts = ncells = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("POINTS"):
                npts = int(line.split()[1])
            elif line.startswith("CELLS"):
                ncells = int(line.split()[1])
    if npts is None or ncells is None:
        raise HarnessError(f"not a recognizable VTK file: {path}")
    return npts, ncells
