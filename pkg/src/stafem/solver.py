"""Jacobi-preconditioned CG and the implicit Euler step on maintained operators."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elasticity, proxy


class PreconditionerError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CgConfig:
    tolerance: float = 1e-8
    max_iterations: int | None = None     # None -> 10 * n
    epsilon: float = proxy.DEFAULT_EPSILON

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    residual: float          # final ||b - A x|| / ||b||
    converged: bool
    trace: list[float] = field(default_factory=list)


def pcg_solve(a: sp.spmatrix, b: np.ndarray, config: CgConfig = CgConfig(),
              x0: np.ndarray | None = None, record_trace: bool = False) -> CgResult:
    """Solve A x = b for symmetric positive definite A.

    Stops when ||r|| <= tolerance * ||b|| or after max_iterations; hitting
    the cap is reported through ``converged``, not raised.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if not np.all(np.isfinite(b)):
        raise NumericalError("non-finite right-hand side")
    diag = a.diagonal()
    if np.any(diag <= 0):
        bad = np.flatnonzero(diag <= 0)[:8].tolist()
        raise PreconditionerError(f"non-positive diagonal at rows {bad}")
    inv_diag = 1.0 / diag
    max_it = config.max_iterations or 10 * n
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CgResult(np.zeros(n), 0, 0.0, True, [0.0] if record_trace else [])
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - a @ x if x0 is not None else b.copy()
    target = config.tolerance * bnorm
    rnorm = float(np.linalg.norm(r))
    trace = [rnorm / bnorm] if record_trace else []
    k = 0
    if rnorm > target:
        z = inv_diag * r
        p = z.copy()
        rz = float(r @ z)
        while k < max_it:
            ap = a @ p
            pap = float(p @ ap)
            if not np.isfinite(pap) or pap <= 0.0:
                raise NumericalError(f"breakdown at iteration {k}: p^T A p = {pap}")
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            k += 1
            rnorm = float(np.linalg.norm(r))
            if record_trace:
                trace.append(rnorm / bnorm)
            if not np.isfinite(rnorm):
                raise NumericalError(f"non-finite residual at iteration {k}")
            if rnorm <= target:
                break
            z = inv_diag * r
            rz_new = float(r @ z)
            p *= rz_new / rz
            p += z
            rz = rz_new
    true_res = float(np.linalg.norm(b - a @ x)) / bnorm
    return CgResult(x, k, true_res, rnorm <= target, trace)


@dataclass
class SolveStats:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    finalize_time: float
    solve_time: float


def static_frame_solve(state, rhs: np.ndarray, config: CgConfig = CgConfig()) -> SolveStats:
    """Finalize a proxy or elasticity state and solve against ``rhs``."""
    t0 = time.perf_counter()
    if isinstance(state, proxy.ProxyState):
        a = proxy.finalize(state)
    else:
        a = elasticity.materialize(state)
    t1 = time.perf_counter()
    res = pcg_solve(a, rhs, config)
    t2 = time.perf_counter()
    return SolveStats(res.x, res.iterations, res.residual, res.converged, t1 - t0, t2 - t1)


GRAVITY = (0.0, -9.8, 0.0)


@dataclass
class DynamicsState:
    u: np.ndarray
    v: np.ndarray
    h: float = 1e-2
    f: np.ndarray | None = None          # per-DOF load; None -> gravity on current mass
    gravity: tuple[float, float, float] = GRAVITY

    def __post_init__(self):
        if self.u.shape != self.v.shape or (self.f is not None and self.f.shape != self.u.shape):
            raise ValueError("u, v and f must have the same length")
        if self.u.shape[0] % 3:
            raise ValueError("state length must be 3 * n_vertices")

    @classmethod
    def at_rest(cls, n_vertices: int, h: float = 1e-2, f: np.ndarray | None = None,
                gravity=GRAVITY) -> "DynamicsState":
        return cls(np.zeros(3 * n_vertices), np.zeros(3 * n_vertices), h, f, tuple(gravity))


def pinned_vertices(state: elasticity.ElasticityState) -> np.ndarray:
    """Vertices with no active incident tet (no diagonal block stored)."""
    n = state.mesh.n_vertices
    keep = np.zeros(n, dtype=bool)
    diag_ids = [p for p in state.blocks if p < n]
    keep[diag_ids] = True
    return ~keep


def euler_system(state: elasticity.ElasticityState, dyn: DynamicsState, epsilon: float = 0.0):
    """(M + h^2 K + eps*h^2*I, rhs, pinned DOF mask) for one implicit Euler step.

    DOFs of vertices without active tets get an identity row and keep their
    current value.
    """
    h = dyn.h
    pinned = np.repeat(pinned_vertices(state), 3)
    mass = state.mass_vector()
    mass[pinned] = 0.0
    if dyn.f is None:
        f = np.tile(np.asarray(dyn.gravity, dtype=np.float64), len(mass) // 3) * mass
    else:
        f = np.where(pinned, 0.0, dyn.f)
    extra = mass + pinned.astype(np.float64)
    a = elasticity.materialize(state, epsilon=epsilon * h * h, extra_diagonal=extra,
                               scale=h * h)
    rhs = mass * (dyn.u + h * dyn.v) + h * h * f
    rhs[pinned] = dyn.u[pinned]
    return a, rhs, pinned


@dataclass
class StepStats:
    iterations: int
    residual: float
    converged: bool
    finalize_time: float
    solve_time: float


def implicit_euler_step(dyn: DynamicsState, state: elasticity.ElasticityState,
                        config: CgConfig = CgConfig(), epsilon: float = 0.0) -> StepStats:
    """Advance ``dyn`` in place by one step of (M + h^2 K) u' = M (u + h v) + h^2 f."""
    t0 = time.perf_counter()
    a, rhs, _ = euler_system(state, dyn, epsilon)
    t1 = time.perf_counter()
    res = pcg_solve(a, rhs, config, x0=dyn.u)
    t2 = time.perf_counter()
    if not np.all(np.isfinite(res.x)):
        raise NumericalError("non-finite displacement")
    dyn.v = (res.x - dyn.u) / dyn.h
    dyn.u = res.x
    return StepStats(res.iterations, res.residual, res.converged, t1 - t0, t2 - t1)
