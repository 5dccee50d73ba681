"""Level-set geometry kernel: surface evaluation, closest-point projection,
approximate normals and a generic Laplace-Beltrami evaluator.

A surface Gamma is the zero level set of a scalar function phi : R^3 -> R
with phi < 0 inside.  All field callables are vectorized over a trailing
axis of length 3, i.e. they accept arrays of shape (..., 3).

Two projection algorithms are provided: a first-order fixed-point scheme
that needs only phi and grad phi, and a Newton iteration on the stationarity
system of  min |x - x0|^2  s.t. phi(x) = 0.  Both share the stopping
criterion

    ( phi(x)^2 / |grad phi(x)|^2
      + | grad phi(x)/|grad phi(x)| - (x - x0)/|x - x0| |^2 )^(1/2)  <  tol

evaluated verbatim.  For seed points outside the surface the limit of
(x - x0) is antiparallel to grad phi, the direction term sticks near 2 and
the criterion cannot be met; stagnation detection then drops the direction
term so the iteration can terminate with a point that still lies on the
surface.  ``normal_check_dropped`` on the result records that this happened.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EvaluationError",
    "DegenerateGradientError",
    "ProjectionError",
    "ScalarField3",
    "LevelSetSurface",
    "ProjectionResult",
    "eval_phi",
    "grad_phi",
    "stopping_residual",
    "project_first_order",
    "project_newton",
    "project_points",
    "approx_normal",
    "grad_normal",
    "laplace_beltrami_levelset",
    "laplace_beltrami_normal_field",
    "field_gradient",
    "field_hessian",
    "make_sphere",
    "make_dziuk",
    "make_enzensberger_stern",
    "make_plane",
    "get_surface",
    "SURFACE_NAMES",
]

# Below this |grad phi| a point counts as critical and projection is hopeless.
GRAD_FLOOR = 1e-14

# Stagnation: this many iterations without a 1e-3 relative residual
# improvement drops to the next fallback phase.  Fallback phases are also
# abandoned after a fixed allowance (residuals creeping down by just over
# the stall tolerance each step would otherwise exhaust max_iter); plain
# descent then finishes the job.  Points still live at max_iter get a
# last-resort descent onto the level set and keep only the |phi| guarantee.
_STALL_WINDOW = 10
_STALL_RTOL = 1e-3
_FALLBACK_BUDGET = 30
_EPILOGUE_STEPS = 12

_POLISH_STEPS = 8


class EvaluationError(RuntimeError):
    """The level-set function returned a non-finite value."""


class DegenerateGradientError(RuntimeError):
    """|grad phi| fell below the critical-point floor."""


class ProjectionError(RuntimeError):
    """Projection onto the surface did not converge."""


@dataclass
class ScalarField3:
    """Scalar field on R^3 with optional analytic derivatives.

    ``value`` maps (..., 3) -> (...).  ``gradient`` and ``hessian``, when
    given, map (..., 3) -> (..., 3) and (..., 3, 3); otherwise they are
    replaced by central finite differences (see ``field_gradient`` /
    ``field_hessian``).
    """

    value: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None


@dataclass
class LevelSetSurface:
    """Implicit surface phi = 0 with phi < 0 inside.

    ``grad_phi``, ``hess_phi`` and ``analytic_normal`` are optional analytic
    callables; missing derivatives fall back to central differences with step
    ``fd_step``.  ``normal_fd_step`` is the separate stencil step used when
    differencing normal fields (the normals themselves are O(h) accurate, so
    a larger step is appropriate).
    """

    phi: Callable
    grad_phi: Optional[Callable] = None
    hess_phi: Optional[Callable] = None
    analytic_normal: Optional[Callable] = None
    fd_step: float = 1e-5
    normal_fd_step: float = 1e-4
    name: str = ""


@dataclass
class ProjectionResult:
    point: np.ndarray
    normal: np.ndarray
    iterations: int
    residual: float
    normal_check_dropped: bool


def eval_phi(surface: LevelSetSurface, x) -> np.ndarray | float:
    """Evaluate phi, rejecting non-finite results."""
    x = np.asarray(x, dtype=float)
    val = np.asarray(surface.phi(x), dtype=float)
    if not np.all(np.isfinite(val)):
        raise EvaluationError(
            f"phi returned a non-finite value on surface {surface.name!r}")
    if val.ndim == 0:
        return float(val)
    return val


def grad_phi(surface: LevelSetSurface, x) -> np.ndarray:
    """Gradient of phi, analytic if available, else second-order central FD.

    Raises ``DegenerateGradientError`` when |grad phi| < 1e-14 anywhere,
    which signals a critical point of the level-set function.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    if surface.grad_phi is not None:
        g = np.asarray(surface.grad_phi(pts), dtype=float)
    else:
        h = surface.fd_step
        g = np.empty_like(pts)
        for i in range(3):
            shift = np.zeros(3)
            shift[i] = h
            g[:, i] = (eval_phi(surface, pts + shift)
                       - eval_phi(surface, pts - shift)) / (2.0 * h)
    if not np.all(np.isfinite(g)):
        raise EvaluationError(
            f"grad phi returned a non-finite value on surface {surface.name!r}")
    norms = np.linalg.norm(g, axis=1)
    if np.any(norms < GRAD_FLOOR):
        bad = pts[int(np.argmin(norms))]
        raise DegenerateGradientError(
            f"critical point of phi near {bad.tolist()} (|grad phi| < {GRAD_FLOOR:g})")
    return g[0] if single else g.reshape(x.shape)


def _hess_phi(surface: LevelSetSurface, x: np.ndarray) -> np.ndarray:
    """Hessian of phi at a single point, analytic or by central differences."""
    if surface.hess_phi is not None:
        return np.asarray(surface.hess_phi(x), dtype=float).reshape(3, 3)
    h = surface.fd_step
    H = np.empty((3, 3))
    if surface.grad_phi is not None:
        for i in range(3):
            shift = np.zeros(3)
            shift[i] = h
            H[:, i] = (grad_phi(surface, x + shift)
                       - grad_phi(surface, x - shift)) / (2.0 * h)
        return 0.5 * (H + H.T)
    p0 = eval_phi(surface, x)
    for i in range(3):
        ei = np.zeros(3)
        ei[i] = h
        H[i, i] = (eval_phi(surface, x + ei) - 2.0 * p0
                   + eval_phi(surface, x - ei)) / h**2
        for j in range(i + 1, 3):
            ej = np.zeros(3)
            ej[j] = h
            H[i, j] = H[j, i] = (
                eval_phi(surface, x + ei + ej) - eval_phi(surface, x + ei - ej)
                - eval_phi(surface, x - ei + ej) + eval_phi(surface, x - ei - ej)
            ) / (4.0 * h**2)
    return H


def field_gradient(f: ScalarField3, x, step: float = 1e-5) -> np.ndarray:
    """Gradient of a scalar field, analytic if the field carries one."""
    x = np.asarray(x, dtype=float)
    if f.gradient is not None:
        return np.asarray(f.gradient(x), dtype=float)
    g = np.empty(x.shape)
    for i in range(3):
        shift = np.zeros(3)
        shift[i] = step
        g[..., i] = (np.asarray(f.value(x + shift), float)
                     - np.asarray(f.value(x - shift), float)) / (2.0 * step)
    return g


def field_hessian(f: ScalarField3, x, step: float = 1e-5) -> np.ndarray:
    """Hessian of a scalar field, analytic if available, else FD of value."""
    x = np.asarray(x, dtype=float)
    if f.hessian is not None:
        return np.asarray(f.hessian(x), dtype=float)
    H = np.empty(x.shape + (3,))
    p0 = np.asarray(f.value(x), float)
    for i in range(3):
        ei = np.zeros(3)
        ei[i] = step
        H[..., i, i] = (np.asarray(f.value(x + ei), float) - 2.0 * p0
                        + np.asarray(f.value(x - ei), float)) / step**2
        for j in range(i + 1, 3):
            ej = np.zeros(3)
            ej[j] = step
            mixed = (np.asarray(f.value(x + ei + ej), float)
                     - np.asarray(f.value(x + ei - ej), float)
                     - np.asarray(f.value(x - ei + ej), float)
                     + np.asarray(f.value(x - ei - ej), float)) / (4.0 * step**2)
            H[..., i, j] = mixed
            H[..., j, i] = mixed
    return H


def stopping_residual(surface: LevelSetSurface, x, x0) -> np.ndarray | float:
    """Projection stopping criterion, evaluated verbatim.

    The direction term is defined as 0 when |x - x0| < 1e-14.  Note the term
    compares grad phi with (x - x0); for x0 outside the surface these are
    antiparallel at the projected point and the residual approaches 2 rather
    than 0.  The projection drivers handle that via stagnation fallback.
    """
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    single = x.ndim == 1
    xs = x.reshape(-1, 3)
    x0s = np.broadcast_to(x0.reshape(-1, 3), xs.shape)
    p = np.atleast_1d(eval_phi(surface, xs))
    g = grad_phi(surface, xs)
    gn = np.linalg.norm(g, axis=1)
    out = (p / gn) ** 2
    d = xs - x0s
    dn = np.linalg.norm(d, axis=1)
    far = dn > 1e-14
    if np.any(far):
        diff = g[far] / gn[far, None] - d[far] / dn[far, None]
        out[far] += np.einsum("ij,ij->i", diff, diff)
    out = np.sqrt(out)
    return float(out[0]) if single else out.reshape(x.shape[:-1])


def _phi_residual(surface, x):
    p = np.atleast_1d(eval_phi(surface, x))
    g = grad_phi(surface, x)
    return np.abs(p) / np.linalg.norm(g, axis=1)


def _polish_onto_surface(surface, x, tol, steps=_POLISH_STEPS):
    """Plain Newton steps for phi until |phi| <= tol * min(1, |grad phi|).

    The main loops stop as soon as the criterion passes tol, which for steep
    level sets (|grad phi| >> 1) can leave |phi| well above tol.  A couple of
    quadratically convergent descent steps pin the points onto the surface
    without moving them appreciably.
    """
    x = x.copy()
    for _ in range(steps):
        p = np.atleast_1d(eval_phi(surface, x))
        g = grad_phi(surface, x)
        g2 = np.einsum("ij,ij->i", g, g)
        need = np.abs(p) > tol * np.minimum(1.0, np.sqrt(g2))
        if not np.any(need):
            return x
        x[need] -= (p[need] / g2[need])[:, None] * g[need]
    p = np.atleast_1d(eval_phi(surface, x))
    g = grad_phi(surface, x)
    bad = np.abs(p) > tol * np.minimum(1.0, np.linalg.norm(g, axis=1))
    if np.any(bad):
        raise ProjectionError(
            f"surface polish failed for {int(bad.sum())} point(s) on "
            f"{surface.name!r}")
    return x


@dataclass
class _BatchProjection:
    points: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    dropped: np.ndarray


def _project_batch(surface, seeds, tol, max_iter) -> _BatchProjection:
    """First-order projection of an (n, 3) batch of seed points.

    Per-point phases: 0 = full criterion, 1 = direction term dropped (the
    iterate must then also settle in place before stopping), 2 = plain
    gradient descent for phi (last resort when the re-anchored update
    itself cycles).  Phase bumps happen after _STALL_WINDOW iterations
    without relative progress, or immediately when the update step is
    pinned below tol.  Points still live at max_iter fall through to a
    descent epilogue that certifies |phi| only.
    """
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    n = seeds.shape[0]
    x = seeds.copy()
    prev = x.copy()
    its = np.zeros(n, dtype=np.int64)
    res = np.zeros(n)
    phase = np.zeros(n, dtype=np.int8)
    best = np.full(n, np.inf)
    stall = np.zeros(n, dtype=np.int16)
    age = np.zeros(n, dtype=np.int16)
    active = np.ones(n, dtype=bool)

    sgn0 = np.sign(np.atleast_1d(eval_phi(surface, seeds)))
    sgn0[sgn0 == 0.0] = 1.0

    for k in range(max_iter + 1):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        p = np.atleast_1d(eval_phi(surface, xa))
        g = grad_phi(surface, xa)
        g2 = np.einsum("ij,ij->i", g, g)
        gn = np.sqrt(g2)
        phi_term = np.abs(p) / gn
        d = xa - seeds[idx]
        dn = np.linalg.norm(d, axis=1)
        dir2 = np.zeros_like(p)
        far = dn > 1e-14
        if np.any(far):
            diff = g[far] / gn[far, None] - d[far] / dn[far, None]
            dir2[far] = np.einsum("ij,ij->i", diff, diff)
        # a point already on the surface whose displacement points against
        # the gradient (the outside-seed case) can never pass the verbatim
        # criterion; drop its direction term right away
        blocked = (phase[idx] == 0) & (phi_term < tol) & (dir2 >= 2.0)
        if np.any(blocked):
            phase[idx[blocked]] = 1
        full = np.sqrt(phi_term**2 + dir2)
        if k > 0:
            relstep = (np.linalg.norm(xa - prev[idx], axis=1)
                       / (1.0 + np.linalg.norm(xa, axis=1)))
        else:
            relstep = np.full(idx.shape, np.inf)
        # with the direction term dropped the phi residual alone would stop
        # the foot-point iteration while it is still moving tangentially;
        # require the update step to settle too so both projection routes
        # keep landing on the same point
        crit = np.where(phase[idx] == 0, full,
                        np.where(phase[idx] == 1,
                                 np.maximum(phi_term, relstep), phi_term))

        done = crit < tol
        fin = idx[done]
        its[fin] = k
        res[fin] = crit[done]
        active[fin] = False
        if k == max_iter:
            rem = idx[~done]
            its[rem] = k
            res[rem] = crit[~done]
            break

        live = idx[~done]
        lcrit = crit[~done]
        improved = lcrit < (1.0 - _STALL_RTOL) * best[live]
        stall[live] = np.where(improved, 0, stall[live] + 1)
        best[live] = np.minimum(best[live], lcrit)
        age[live] += 1
        pinned = relstep[~done] <= tol
        overdue = (phase[live] >= 1) & (age[live] >= _FALLBACK_BUDGET)
        bump = (stall[live] >= _STALL_WINDOW) | pinned | overdue
        if np.any(bump):
            bi = live[bump]
            phase[bi] = np.minimum(phase[bi] + 1, 2)
            stall[bi] = 0
            age[bi] = 0
            best[bi] = np.inf

        prev[live] = x[live]
        pl = p[~done]
        gl = g[~done]
        g2l = g2[~done]
        xt = x[live] - (pl / g2l)[:, None] * gl
        anchored = phase[live] < 2
        if np.any(anchored):
            ai = live[anchored]
            gt = grad_phi(surface, xt[anchored])
            gtn = np.linalg.norm(gt, axis=1)
            dist = sgn0[ai] * np.linalg.norm(xt[anchored] - seeds[ai], axis=1)
            x[ai] = seeds[ai] - (dist / gtn)[:, None] * gt
        if np.any(~anchored):
            x[live[~anchored]] = xt[~anchored]

    if np.any(active):
        # last resort: descend onto the level set; these exits certify only
        # |phi|, not the direction criterion, so they report as dropped
        ai = np.flatnonzero(active)
        try:
            x[ai] = _polish_onto_surface(surface, x[ai], tol,
                                         steps=_EPILOGUE_STEPS)
        except ProjectionError:
            still = _phi_residual(surface, x[ai])
            worst = x[ai[int(np.argmax(still))]]
            raise ProjectionError(
                f"projection did not converge within {max_iter} iterations "
                f"for {int((still >= tol).sum())} point(s) on "
                f"{surface.name!r}; worst near {worst.tolist()}") from None
        phase[ai] = 2

    x = _polish_onto_surface(surface, x, tol)
    # recompute the reported residual at the polished points
    dropped = phase >= 1
    final = np.where(dropped, _phi_residual(surface, x),
                     np.atleast_1d(stopping_residual(surface, x, seeds)))
    return _BatchProjection(points=x, iterations=its, residuals=final,
                            dropped=dropped)


def project_points(surface: LevelSetSurface, seeds, tol: float = 1e-10,
                   max_iter: int = 100) -> _BatchProjection:
    """Vectorized first-order projection of many seed points at once.

    Returns an object with ``points``, ``iterations``, ``residuals`` and
    ``dropped`` arrays.  Semantics per point match ``project_first_order``.
    """
    return _project_batch(surface, seeds, tol, max_iter)


def _projection_normal(surface, seed, point, tol):
    """Unit normal associated with a projection, oriented along grad phi."""
    g = grad_phi(surface, point)
    disp = np.asarray(seed, float) - point
    dn = np.linalg.norm(disp)
    if dn > 10.0 * tol * (1.0 + np.linalg.norm(seed)):
        sgn = 1.0 if eval_phi(surface, seed) >= 0 else -1.0
        n = sgn * disp / dn
        if np.dot(n, g) < 0.0:
            n = -n
        return n
    return g / np.linalg.norm(g)


def project_first_order(surface: LevelSetSurface, x0, tol: float = 1e-10,
                        max_iter: int = 100) -> ProjectionResult:
    """Project a point onto the surface with the first-order scheme.

    Each iteration takes a Newton step for phi,

        xt = x - phi(x) grad phi(x) / |grad phi(x)|^2 ,
        dist = sign(phi(x0)) |xt - x0| ,

    and re-anchors at the seed along the gradient direction at xt,

        x <- x0 - dist * grad phi(xt) / |grad phi(xt)| .

    Stops when the verbatim criterion passes tol, falling back per the
    module docstring when the direction term blocks termination.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    br = _project_batch(surface, x0[None, :], tol, max_iter)
    point = br.points[0]
    return ProjectionResult(
        point=point,
        normal=_projection_normal(surface, x0, point, tol),
        iterations=int(br.iterations[0]),
        residual=float(br.residuals[0]),
        normal_check_dropped=bool(br.dropped[0]),
    )


def project_newton(surface: LevelSetSurface, x0, tol: float = 1e-10,
                   max_iter: int = 100) -> ProjectionResult:
    """Project a point by Newton iteration on the constrained minimization.

    Seeks a stationary point of F(x, lam) = |x - x0|^2 + lam * phi(x),
    starting from (x0, 2 phi(x0)/|grad phi(x0)|^2).  A singular Newton
    matrix triggers a single first-order step instead.  Stopping criterion
    and stagnation fallback match ``project_first_order``.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    p0 = eval_phi(surface, x0)
    g0 = grad_phi(surface, x0)
    lam = 2.0 * p0 / float(g0 @ g0)
    sgn0 = 1.0 if p0 >= 0 else -1.0

    x = x0.copy()
    prev = x.copy()
    phase = 0
    best = np.inf
    stall = 0
    age = 0
    iterations = max_iter

    for k in range(max_iter + 1):
        p = eval_phi(surface, x)
        g = grad_phi(surface, x)
        gn = np.linalg.norm(g)
        phi_term = abs(p) / gn
        d = x - x0
        dn = np.linalg.norm(d)
        dir2 = 0.0
        if dn > 1e-14:
            diff = g / gn - d / dn
            dir2 = float(diff @ diff)
        if phase == 0 and phi_term < tol and dir2 >= 2.0:
            phase = 1  # on surface but antiparallel displacement: blocked
        relstep = (np.linalg.norm(x - prev) / (1.0 + np.linalg.norm(x))
                   if k > 0 else np.inf)
        if phase == 0:
            crit = np.sqrt(phi_term**2 + dir2)
        elif phase == 1:
            # see _project_batch: wait for the iterate to settle, not just
            # for phi to vanish, so both routes land on the same point
            crit = max(phi_term, relstep)
        else:
            crit = phi_term
        if crit < tol:
            iterations = k
            break
        if k == max_iter:
            # last resort: descend onto the level set, keep |phi| guarantee
            try:
                x = _polish_onto_surface(surface, x[None, :], tol,
                                         steps=_EPILOGUE_STEPS)[0]
            except ProjectionError:
                raise ProjectionError(
                    f"Newton projection did not converge within {max_iter} "
                    f"iterations from {x0.tolist()} on "
                    f"{surface.name!r}") from None
            phase = 2
            iterations = k
            break

        if crit < (1.0 - _STALL_RTOL) * best:
            stall = 0
        else:
            stall += 1
        best = min(best, crit)
        age += 1
        pinned = relstep <= tol
        overdue = phase >= 1 and age >= _FALLBACK_BUDGET
        if stall >= _STALL_WINDOW or pinned or overdue:
            phase = min(phase + 1, 2)
            stall = 0
            age = 0
            best = np.inf

        prev = x.copy()
        if phase >= 2:
            x = x - (p / float(g @ g)) * g
            continue
        J = np.zeros((4, 4))
        J[:3, :3] = 2.0 * np.eye(3) + lam * _hess_phi(surface, x)
        J[:3, 3] = g
        J[3, :3] = g
        F = np.empty(4)
        F[:3] = 2.0 * (x - x0) + lam * g
        F[3] = p
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            # singular Newton matrix: take one first-order step instead
            xt = x - (p / float(g @ g)) * g
            gt = grad_phi(surface, xt)
            dist = sgn0 * np.linalg.norm(xt - x0)
            x = x0 - dist * gt / np.linalg.norm(gt)
        else:
            x = x + delta[:3]
            lam += float(delta[3])

    x = _polish_onto_surface(surface, x[None, :], tol)[0]
    if phase >= 1:
        final = float(_phi_residual(surface, x[None, :])[0])
    else:
        final = stopping_residual(surface, x, x0)
    return ProjectionResult(
        point=x,
        normal=_projection_normal(surface, x0, x, tol),
        iterations=iterations,
        residual=final,
        normal_check_dropped=phase >= 1,
    )


def _approx_normal_batch(surface, pts, tol, max_iter=100):
    """Vectorized ``approx_normal``; pts has shape (n, 3)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    p = np.atleast_1d(eval_phi(surface, pts))
    out = np.empty_like(pts)
    on = np.abs(p) < tol
    if np.any(on):
        if surface.analytic_normal is not None:
            n = np.asarray(surface.analytic_normal(pts[on]), dtype=float)
        else:
            n = grad_phi(surface, pts[on])
        out[on] = n / np.linalg.norm(n, axis=1, keepdims=True)
    off = ~on
    if np.any(off):
        proj = _project_batch(surface, pts[off], tol, max_iter)
        disp = pts[off] - proj.points
        dn = np.linalg.norm(disp, axis=1)
        g = grad_phi(surface, proj.points)
        n = np.sign(p[off])[:, None] * disp
        # a seed sitting within polish distance of the surface gives no
        # usable displacement direction; fall back to the gradient there
        tiny = dn <= 10.0 * tol * (1.0 + np.linalg.norm(pts[off], axis=1))
        n[tiny] = g[tiny]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        flip = np.einsum("ij,ij->i", n, g) < 0.0
        n[flip] = -n[flip]
        out[off] = n
    return out


def approx_normal(surface: LevelSetSurface, x0, tol: float = 1e-10) -> np.ndarray:
    """Approximate the outward unit normal at (the projection of) x0.

    On the surface (|phi| < tol) the analytic normal is used when available,
    else grad phi normalized.  Off the surface the point is projected and the
    unit vector along sign(phi(x0)) * (x0 - proj(x0)) is returned, with the
    sign corrected so the result points in the direction of increasing phi.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    out = _approx_normal_batch(surface, x0.reshape(-1, 3), tol)
    return out[0] if single else out.reshape(x0.shape)


def _grad_normal_batch(surface, pts, tol=1e-10):
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    h = surface.normal_fd_step
    J = np.empty(pts.shape + (3,))
    for i in range(3):
        shift = np.zeros(3)
        shift[i] = h
        nplus = _approx_normal_batch(surface, pts + shift, tol)
        nminus = _approx_normal_batch(surface, pts - shift, tol)
        J[:, :, i] = (nplus - nminus) / (2.0 * h)
    return J


def grad_normal(surface: LevelSetSurface, x) -> np.ndarray:
    """Jacobian of the approximate normal field by central differences.

    All nine entries are differenced with step ``surface.normal_fd_step``;
    projection failures at stencil points propagate.  The trace approximates
    the sum of principal curvatures (e.g. 2 on the unit sphere).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    J = _grad_normal_batch(surface, x.reshape(-1, 3))
    return J[0] if single else J.reshape(x.shape + (3,))


def _laplace_beltrami_core(nu, Jnu, u, pts, step):
    gu = field_gradient(u, pts, step)
    Hu = field_hessian(u, pts, step)
    lap = np.trace(Hu, axis1=-2, axis2=-1)
    nHn = np.einsum("...i,...ij,...j->...", nu, Hu, nu)
    trJ = np.trace(Jnu, axis1=-2, axis2=-1)
    gdotn = np.einsum("...i,...i->...", gu, nu)
    return lap - nHn - trJ * gdotn


def laplace_beltrami_levelset(surface: LevelSetSurface, u: ScalarField3, x,
                              tol: float = 1e-10) -> np.ndarray | float:
    """Surface Laplacian of an ambient field at on-surface points.

    Evaluates  Delta u - nu . (H u) nu - tr(grad nu) (grad u . nu)  with the
    normal and its Jacobian taken from ``approx_normal`` / ``grad_normal``.
    Points must lie on the surface (|phi(x)| < 1e-8).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    p = np.atleast_1d(eval_phi(surface, pts))
    if np.any(np.abs(p) >= 1e-8):
        raise ValueError("laplace_beltrami_levelset requires on-surface "
                         "points (|phi| < 1e-8)")
    nu = _approx_normal_batch(surface, pts, tol)
    Jnu = _grad_normal_batch(surface, pts, tol)
    out = _laplace_beltrami_core(nu, Jnu, u, pts, surface.normal_fd_step)
    return float(out[0]) if single else out.reshape(x.shape[:-1])


def laplace_beltrami_normal_field(normal_field: Callable, u: ScalarField3, x,
                                  step: float = 1e-4) -> np.ndarray | float:
    """Surface Laplacian using an explicit normal field instead of projection.

    ``normal_field`` maps (..., 3) -> (..., 3); its values are normalized
    before use so only the direction matters.  Useful when a closed-form
    normal is known (it avoids any projection work in the FD stencils).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)

    def unit(q):
        v = np.asarray(normal_field(q), dtype=float)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    nu = unit(pts)
    J = np.empty(pts.shape + (3,))
    for i in range(3):
        shift = np.zeros(3)
        shift[i] = step
        J[:, :, i] = (unit(pts + shift) - unit(pts - shift)) / (2.0 * step)
    out = _laplace_beltrami_core(nu, J, u, pts, step)
    return float(out[0]) if single else out.reshape(x.shape[:-1])


# ---------------------------------------------------------------------------
# built-in surfaces


def make_sphere() -> LevelSetSurface:
    """Unit sphere, phi = |x|^2 - 1."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) - 1.0

    def grad(x):
        return 2.0 * np.asarray(x, dtype=float)

    def hess(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape + (3,))
        H[..., 0, 0] = H[..., 1, 1] = H[..., 2, 2] = 2.0
        return H

    def normal(x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    return LevelSetSurface(phi=phi, grad_phi=grad, hess_phi=hess,
                           analytic_normal=normal, name="sphere")


def _dziuk_numerator(x):
    x = np.asarray(x, dtype=float)
    a = x[..., 0] - x[..., 2] ** 2
    n = np.empty_like(x)
    n[..., 0] = a
    n[..., 1] = x[..., 1]
    n[..., 2] = x[..., 2] * (1.0 - 2.0 * a)
    return n


def make_dziuk() -> LevelSetSurface:
    """Sheared sphere of Dziuk type, phi = (x1 - x3^2)^2 + x2^2 + x3^2 - 1."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        a = x[..., 0] - x[..., 2] ** 2
        return a**2 + x[..., 1] ** 2 + x[..., 2] ** 2 - 1.0

    def grad(x):
        return 2.0 * _dziuk_numerator(x)

    def hess(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape + (3,))
        H[..., 0, 0] = 2.0
        H[..., 1, 1] = 2.0
        H[..., 0, 2] = H[..., 2, 0] = -4.0 * x[..., 2]
        H[..., 2, 2] = 2.0 - 4.0 * x[..., 0] + 12.0 * x[..., 2] ** 2
        return H

    def normal(x):
        # closed form, unit exactly on the surface
        x = np.asarray(x, dtype=float)
        den = np.sqrt(1.0 + 4.0 * x[..., 2] ** 2
                      * (1.0 - x[..., 0] - x[..., 1] ** 2))
        return _dziuk_numerator(x) / den[..., None]

    return LevelSetSurface(phi=phi, grad_phi=grad, hess_phi=hess,
                           analytic_normal=normal, name="dziuk")


def make_enzensberger_stern() -> LevelSetSurface:
    """Six-armed star surface, 400 (x^2 y^2 + y^2 z^2 + x^2 z^2)
    - (1 - x^2 - y^2 - z^2)^3 - 40 = 0."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        x2 = x**2
        cross = (x2[..., 0] * x2[..., 1] + x2[..., 1] * x2[..., 2]
                 + x2[..., 0] * x2[..., 2])
        s = 1.0 - x2.sum(axis=-1)
        return 400.0 * cross - s**3 - 40.0

    def grad(x):
        x = np.asarray(x, dtype=float)
        x2 = x**2
        s = 1.0 - x2.sum(axis=-1)
        g = np.empty_like(x)
        g[..., 0] = 800.0 * x[..., 0] * (x2[..., 1] + x2[..., 2]) \
            + 6.0 * x[..., 0] * s**2
        g[..., 1] = 800.0 * x[..., 1] * (x2[..., 0] + x2[..., 2]) \
            + 6.0 * x[..., 1] * s**2
        g[..., 2] = 800.0 * x[..., 2] * (x2[..., 0] + x2[..., 1]) \
            + 6.0 * x[..., 2] * s**2
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        x2 = x**2
        s = 1.0 - x2.sum(axis=-1)
        H = np.empty(x.shape + (3,))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            H[..., i, i] = (800.0 * (x2[..., j] + x2[..., k])
                            + 6.0 * s**2 - 24.0 * x2[..., i] * s)
        for i in range(3):
            for j in range(i + 1, 3):
                mixed = x[..., i] * x[..., j] * (1600.0 - 24.0 * s)
                H[..., i, j] = mixed
                H[..., j, i] = mixed
        return H

    return LevelSetSurface(phi=phi, grad_phi=grad, hess_phi=hess,
                           name="enzensberger-stern")


def make_plane() -> LevelSetSurface:
    """Plane x3 = 0; handy as a flat sanity surface in tests."""

    def phi(x):
        return np.asarray(x, dtype=float)[..., 2]

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        g[..., 2] = 1.0
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (3,))

    def normal(x):
        return grad(x)

    return LevelSetSurface(phi=phi, grad_phi=grad, hess_phi=hess,
                           analytic_normal=normal, name="plane")


_SURFACE_FACTORIES = {
    "sphere": make_sphere,
    "dziuk": make_dziuk,
    "enzensberger-stern": make_enzensberger_stern,
}

SURFACE_NAMES = tuple(sorted(_SURFACE_FACTORIES))


def get_surface(name: str) -> LevelSetSurface:
    """Look up a built-in surface by name."""
    try:
        return _SURFACE_FACTORIES[name]()
    except KeyError:
        raise ValueError(
            f"unknown surface {name!r}; available: {', '.join(SURFACE_NAMES)}"
        ) from None
