"""Polygonal paths, discretized action, and the rate function by minimum action.

The action of a polygonal path with knots x_0..x_N at uniform times is the
left-endpoint sum dt * sum_i L(x_i, (x_{i+1}-x_i)/dt).  Segment velocities
outside the steepness region make the action +inf; the optimizer treats these
as hard walls (rejected by the line search), never as large finite penalties.

The rate function l(x, y) is the infimum of the action over interior knots,
found by limited-memory quasi-Newton descent with restarts.  A bounded-lattice
value-iteration oracle provides an independent check at desk scale (d <= 2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .conjugate import legendre_batch
from .errors import Infeasible
from .model import JumpKernel


# --------------------------------------------------------------------------
# paths and targets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolygonalPath:
    """Uniform-time polygonal path: knots (N+1, d) at times k * horizon / N."""

    horizon: float
    knots: np.ndarray

    def __post_init__(self):
        knots = np.atleast_2d(np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "knots", knots)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if knots.shape[0] < 2:
            raise ValueError("need at least two knots")
        if not np.isfinite(knots).all():
            raise ValueError("knots must be finite")

    @property
    def n_segments(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.horizon / self.n_segments

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.knots.shape[0])

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.knots, axis=0) / self.dt

    @classmethod
    def straight_line(cls, x, y, n_segments: int, horizon: float = 1.0) -> "PolygonalPath":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        t = np.linspace(0.0, 1.0, n_segments + 1)[:, None]
        return cls(horizon, (1 - t) * x[None, :] + t * y[None, :])

    def write_csv(self, fp) -> None:
        """Columns t, x_1..x_d."""
        d = self.knots.shape[1]
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{k + 1}" for k in range(d)])
        for t, row in zip(self.times, self.knots):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def contains(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) < self.radius)

    def closure_grid(self, per_axis: int) -> np.ndarray:
        d = self.center.size
        axes = [np.linspace(c - self.radius, c + self.radius, per_axis) for c in self.center]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        keep = np.linalg.norm(pts - self.center[None, :], axis=1) <= self.radius + 1e-12
        return pts[keep]

    def clip(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        delta = y - self.center
        r = np.linalg.norm(delta)
        if r <= self.radius:
            return y
        return self.center + delta * (self.radius / r)

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    kind = "box"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not np.all(lo < hi):
            raise ValueError("box needs lo < hi componentwise")

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lo) and np.all(x < self.hi))

    def closure_grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(l, h, per_axis) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def clip(self, y) -> np.ndarray:
        return np.clip(np.asarray(y, dtype=float), self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


def target_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "ball":
        return Ball(np.asarray(d["center"], dtype=float), float(d["radius"]))
    if kind == "box":
        return Box(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))
    raise ValueError(f"unsupported target set kind {kind!r} (balls and boxes only)")


# --------------------------------------------------------------------------
# action
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathAction:
    """Total action, per-segment contributions, and the first infeasible segment."""

    value: float
    segment_values: np.ndarray
    infeasible_segment: int | None


def action_of_path(kernel: JumpKernel, path: PolygonalPath) -> PathAction:
    """dt * sum_i L(x_i, v_i) with left-endpoint states; +inf on infeasible segments."""
    V = path.velocities
    Xl = path.knots[:-1]
    values, _, _, feasible, _, _ = legendre_batch(kernel, Xl, V)
    seg = path.dt * np.where(feasible, values, math.inf)
    if feasible.all():
        return PathAction(float(seg.sum()), seg, None)
    first_bad = int(np.where(~feasible)[0][0])
    return PathAction(math.inf, seg, first_bad)


def _segment_data(kernel: JumpKernel, knots: np.ndarray, dt: float):
    """(total, per-segment L, maximizers, feasible) for the discretized action."""
    V = np.diff(knots, axis=0) / dt
    Xl = knots[:-1]
    values, xi, _, feasible, _, _ = legendre_batch(kernel, Xl, V)
    if not feasible.all():
        return math.inf, values, xi, feasible
    return dt * float(values.sum()), values, xi, feasible


def _state_grad(kernel: JumpKernel, knots: np.ndarray, dt: float) -> np.ndarray:
    """dL/dx at interior knots by central differences on the state argument."""
    N1, d = knots.shape
    inner = knots[1:-1]
    V = (knots[2:] - knots[1:-1]) / dt          # velocity of the segment led by each interior knot
    eps = 1e-5 * (1.0 + np.abs(inner))
    out = np.zeros_like(inner)
    for m in range(d):
        Xp = inner.copy()
        Xm = inner.copy()
        Xp[:, m] += eps[:, m]
        Xm[:, m] -= eps[:, m]
        vp, _, _, fp, _, _ = legendre_batch(kernel, Xp, V)
        vm, _, _, fm, _, _ = legendre_batch(kernel, Xm, V)
        both = fp & fm
        out[:, m] = np.where(both, (vp - vm) / (2 * eps[:, m]), 0.0)
        onlyp = fp & ~fm
        onlym = fm & ~fp
        if onlyp.any() or onlym.any():
            v0, _, _, f0, _, _ = legendre_batch(kernel, inner, V)
            out[onlyp, m] = (vp[onlyp] - v0[onlyp]) / eps[onlyp, m]
            out[onlym, m] = (v0[onlym] - vm[onlym]) / eps[onlym, m]
    return out


@dataclass(frozen=True, eq=False)
class RateFunctionResult:
    """Minimum-action estimate of l(x, y) with its minimizing path."""

    value: float
    path: PolygonalPath
    restarts_used: int
    gradient_norm_at_exit: float
    restart_log: tuple    # (initial_action, final_action) per attempted restart


def _lbfgs_descend(fun_grad, u0: np.ndarray, max_iter: int, mem: int = 10):
    """L-BFGS with Armijo backtracking; inf objective acts as a hard wall.

    Returns (u, f, grad_norm).  Descent is monotone by construction.
    """
    u = u0.copy()
    f, g = fun_grad(u)
    if not math.isfinite(f):
        return u, f, math.inf
    S, Y, rho = [], [], []
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= 1e-7 * (1.0 + abs(f)):
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * (s @ q)
            alphas.append(a)
            q -= a * y
        if Y:
            gamma = (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
            q *= gamma
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r * (y @ q)
            q += (a - b) * s
        p = -q
        if g @ p >= 0:      # not a descent direction; reset memory
            p = -g
            S, Y, rho = [], [], []
        step = 1.0
        gp = g @ p
        accepted = False
        for _bt in range(50):
            u_new = u + step * p
            f_new, g_new = fun_grad(u_new)
            if math.isfinite(f_new) and f_new <= f + 1e-4 * step * gp:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s_vec = u_new - u
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            rho.append(1.0 / sy)
            if len(S) > mem:
                S.pop(0)
                Y.pop(0)
                rho.pop(0)
        u, f, g = u_new, f_new, g_new
    return u, f, float(np.linalg.norm(g))


def _perturbation(n_segments: int, d: int, amplitude: float, seed: int, restart: int) -> np.ndarray:
    """Smooth endpoint-pinned bump: sum of low-order sine modes with random weights."""
    rng = np.random.default_rng([seed, restart])
    tbar = np.linspace(0.0, 1.0, n_segments + 1)[1:-1]
    out = np.zeros((n_segments - 1, d))
    for m in range(1, 4):
        coef = rng.standard_normal(d) / m
        out += amplitude * coef[None, :] * np.sin(m * math.pi * tbar)[:, None]
    return out


def minimize_action(kernel: JumpKernel, x, y, n_segments: int = 50,
                    restarts: int = 8, horizon: float = 1.0, seed: int = 0,
                    max_iter: int = 500) -> RateFunctionResult:
    """Estimate l(x, y) = inf over paths from x to y of the action.

    Quasi-Newton descent over interior knots from the straight line plus
    seeded smooth perturbations; the best restart wins, ties broken by lowest
    restart index.  Raises Infeasible if no restart starts at finite action.
    """
    if n_segments < 2:
        raise ValueError("need n_segments >= 2")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = x.size
    dt = horizon / n_segments
    base = PolygonalPath.straight_line(x, y, n_segments, horizon).knots
    state_dep = not kernel.state_independent

    def fun_grad(u):
        knots = base.copy()
        knots[1:-1] = u.reshape(n_segments - 1, d)
        total, _, xi, feasible = _segment_data(kernel, knots, dt)
        if not math.isfinite(total):
            return math.inf, np.zeros_like(u)
        grad = xi[:-1] - xi[1:]             # envelope term: d/dx_k of neighboring segments
        if state_dep:
            grad = grad + dt * _state_grad(kernel, knots, dt)
        return total, grad.ravel()

    amplitude = 0.1 * float(np.linalg.norm(y - x))
    best = None
    log = []
    used = 0
    for r in range(restarts):
        knots0 = base.copy()
        if r > 0:
            knots0[1:-1] += _perturbation(n_segments, d, amplitude, seed, r)
        init_action = _segment_data(kernel, knots0, dt)[0]
        if not math.isfinite(init_action):
            log.append((math.inf, math.inf))
            continue
        used += 1
        u, f, gn = _lbfgs_descend(fun_grad, knots0[1:-1].ravel(), max_iter)
        log.append((float(init_action), float(f)))
        if best is None or f < best[1]:
            best = (u, f, gn)
    if best is None:
        raise Infeasible(f"no feasible initialization from {x} to {y} in {restarts} restarts")
    u, f, gn = best
    knots = base.copy()
    knots[1:-1] = u.reshape(n_segments - 1, d)
    return RateFunctionResult(value=float(f), path=PolygonalPath(horizon, knots),
                              restarts_used=used, gradient_norm_at_exit=gn,
                              restart_log=tuple(log))


# --------------------------------------------------------------------------
# quasi-potential to a target set
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateToSetResult:
    value: float
    argmin_y: np.ndarray
    evaluations: tuple   # (y, l(x, y)) over the search grid


def rate_to_set(kernel: JumpKernel, x, target, n_segments: int = 50,
                restarts: int = 8, grid_per_axis: int = 9, polish_steps: int = 12,
                seed: int = 0) -> RateToSetResult:
    """inf_{y in target} l(x, y) over a deterministic grid on the target closure,
    then a local golden-section polish per axis around the best grid point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if target.contains(x):
        path = PolygonalPath.straight_line(x, x, n_segments)
        return RateToSetResult(0.0, x, ((x.copy(), 0.0),))

    ys = target.closure_grid(grid_per_axis)
    evals = []
    best_y, best_v = None, math.inf
    for yp in ys:
        try:
            res = minimize_action(kernel, x, yp, n_segments, restarts, seed=seed)
            v = res.value
        except Infeasible:
            v = math.inf
        evals.append((yp.copy(), v))
        if v < best_v:
            best_y, best_v = yp.copy(), v
    if best_y is None or not math.isfinite(best_v):
        raise Infeasible("every grid point in the target closure is unreachable")

    # per-axis golden-section refinement within one grid cell
    spans = ys.max(axis=0) - ys.min(axis=0)
    cell = spans / max(grid_per_axis - 1, 1)
    phi = (math.sqrt(5.0) - 1) / 2

    def value_at(yp):
        yp = target.clip(yp)
        try:
            return minimize_action(kernel, x, yp, n_segments, restarts, seed=seed).value, yp
        except Infeasible:
            return math.inf, yp

    for axis in range(x.size):
        if cell[axis] == 0:
            continue
        lo = best_y.copy()
        hi = best_y.copy()
        lo[axis] -= cell[axis]
        hi[axis] += cell[axis]
        lo = target.clip(lo)
        hi = target.clip(hi)
        a, b = lo[axis], hi[axis]
        c = b - phi * (b - a)
        dpt = a + phi * (b - a)
        yc, yd = best_y.copy(), best_y.copy()
        yc[axis], yd[axis] = c, dpt
        fc, yc = value_at(yc)
        fd, yd = value_at(yd)
        for _ in range(polish_steps):
            if fc <= fd:
                b, dpt = dpt, c
                fd = fc
                c = b - phi * (b - a)
                yc = best_y.copy()
                yc[axis] = c
                fc, yc = value_at(yc)
            else:
                a, c = c, dpt
                fc = fd
                dpt = a + phi * (b - a)
                yd = best_y.copy()
                yd[axis] = dpt
                fd, yd = value_at(yd)
        for f_cand, y_cand in ((fc, yc), (fd, yd)):
            if f_cand < best_v:
                best_v = float(f_cand)
                best_y = y_cand.copy()
    return RateToSetResult(float(best_v), best_y, tuple(evals))


# --------------------------------------------------------------------------
# dynamic-programming oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DpLattice:
    """Bounded regular state lattice and time resolution for value iteration."""

    lo: np.ndarray
    hi: np.ndarray
    points_per_axis: int
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.points_per_axis < 2 or self.n_steps < 1:
            raise ValueError("lattice needs >= 2 points per axis and >= 1 step")

    def nodes(self) -> np.ndarray:
        axes = [np.linspace(l, h, self.points_per_axis) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def dp_oracle(kernel: JumpKernel, x, target, lattice: DpLattice,
              horizon: float = 1.0) -> float:
    """Brute-force value iteration V_{k+1}(b) = min_a V_k(a) + dt L(x_a, (x_b-x_a)/dt).

    Converges to l(x, target) from above under lattice refinement.  d <= 2 only.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    if d > 2:
        raise ValueError("dp_oracle supports d <= 2")
    nodes = lattice.nodes()
    n = nodes.shape[0]
    dt = horizon / lattice.n_steps

    # stage costs: for each source a, batch-solve over all arrival nodes
    cost = np.full((n, n), math.inf)
    for a in range(n):
        V = (nodes - nodes[a]) / dt
        vals, _, _, feas, _, _ = legendre_batch(
            kernel, np.broadcast_to(nodes[a], (n, d)), V)
        cost[a] = np.where(feas, dt * vals, math.inf)

    start = int(np.argmin(np.linalg.norm(nodes - x[None, :], axis=1)))
    value = np.full(n, math.inf)
    value[start] = 0.0
    for _ in range(lattice.n_steps):
        with np.errstate(invalid="ignore"):
            value = np.min(value[:, None] + cost, axis=0)

    in_target = np.array([target.contains(p) for p in nodes])
    if not in_target.any():
        raise Infeasible("no lattice node falls inside the target")
    return float(value[in_target].min())
