"""Legendre-Fenchel conjugation of the jump Hamiltonian.

L(x, alpha) = sup_xi { <alpha, xi> - H(x, xi) } is computed by damped Newton
ascent on the strictly concave objective, started at xi = 0.  The closure of
the gradient range of H is the steepness region; outside it the iterates
diverge, which is detected and reported as NonSteep (L = +inf).

The batch solver runs many (x, alpha) problems in lockstep with per-element
backtracking; it is the primitive behind action evaluation, minorant
construction and the dynamic-programming oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, NonSteep
from .model import JumpKernel, hamiltonian

NEWTON_MAX_ITER = 60
DIVERGENCE_NORM = 1e3
RESIDUAL_SCALE = 1e-10


@dataclass(frozen=True, eq=False)
class ConjugateResult:
    """Value and certificate of one conjugate solve.

    maximizer is the optimal covector xi*; curvature is the alpha-Hessian of L,
    i.e. the inverse xi-Hessian of H at xi*; residual is |grad H(xi*) - alpha|.
    """

    value: float
    maximizer: np.ndarray
    curvature: np.ndarray
    iterations: int
    residual: float


def _h_terms(kernel: JumpKernel, X: np.ndarray) -> np.ndarray:
    """Rates at a batch of states, (n, J)."""
    return kernel.rates(X)


def legendre_batch(kernel: JumpKernel, X: np.ndarray, A: np.ndarray,
                   want_curvature: bool = False,
                   max_iter: int = NEWTON_MAX_ITER,
                   divergence_norm: float = DIVERGENCE_NORM):
    """Solve L(x_i, alpha_i) for all rows of X, A in lockstep.

    Returns (values, maximizers, curvatures, feasible, iterations, residuals).
    Infeasible rows get value +inf and feasible=False instead of raising.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, d = A.shape
    Z = kernel.displacements                       # (J, d)
    lam = _h_terms(kernel, X)                      # (n, J)

    xi = np.zeros((n, d))
    tol = RESIDUAL_SCALE * (1.0 + np.linalg.norm(A, axis=1))

    def evaluate(xi_arr):
        """objective <a,xi> - H, plus expm1(dots) and dots, rowwise."""
        dots = xi_arr @ Z.T                        # (n, J)
        with np.errstate(over="ignore"):
            e = np.expm1(dots)
        h = np.einsum("nj,nj->n", lam, e - dots)
        obj = np.einsum("nd,nd->n", A, xi_arr) - h
        return obj, e, dots

    obj, e, dots = evaluate(xi)
    residual = np.linalg.norm(A - (lam * e) @ Z, axis=1)
    converged = residual <= tol
    diverged = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=int)

    for _ in range(max_iter):
        active = ~(converged | diverged)
        if not active.any():
            break
        idx = np.where(active)[0]
        grad = A[idx] - (lam[idx] * e[idx]) @ Z                   # (na, d)
        with np.errstate(over="ignore"):
            w = lam[idx] * np.exp(dots[idx])                      # (na, J)
        w = np.where(np.isfinite(w), w, 1e300)
        hess = np.einsum("nj,jd,je->nde", w, Z, Z)                # (na, d, d)
        # tiny ridge keeps degenerate (non-spanning) kernels solvable
        hess = hess + 1e-14 * np.eye(d)
        step = np.linalg.solve(hess, grad)

        # backtracking: halve per-row until the concave objective increases
        s = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        for _bt in range(40):
            todo = np.where(~accepted)[0]
            if todo.size == 0:
                break
            rows = idx[todo]
            cand = xi[rows] + s[todo, None] * step[todo]
            dots_c = cand @ Z.T
            with np.errstate(over="ignore"):
                e_c = np.expm1(dots_c)
            h_c = np.einsum("nj,nj->n", lam[rows], e_c - dots_c)
            obj_c = np.einsum("nd,nd->n", A[rows], cand) - h_c
            ok = np.isfinite(obj_c) & (obj_c >= obj[rows])
            xi[rows[ok]] = cand[ok]
            accepted[todo[ok]] = True
            s[todo[~ok]] *= 0.5
        # rows whose line search collapsed keep xi; the iteration cap flags them

        obj, e, dots = evaluate(xi)
        residual = np.linalg.norm(A - (lam * e) @ Z, axis=1)
        iters[idx] += 1
        converged = converged | (residual <= tol)
        diverged = diverged | (np.linalg.norm(xi, axis=1) > divergence_norm)

    feasible = converged & ~diverged
    values = np.where(feasible, obj, math.inf)
    curvatures = None
    if want_curvature:
        with np.errstate(over="ignore"):
            w = lam * np.exp(dots)
        hess = np.einsum("nj,jd,je->nde", np.where(np.isfinite(w), w, 1e300), Z, Z)
        curvatures = np.full((n, d, d), np.nan)
        for i in np.where(feasible)[0]:
            try:
                curvatures[i] = np.linalg.inv(hess[i])
            except np.linalg.LinAlgError:
                feasible[i] = False
                values[i] = math.inf
    return values, xi, curvatures, feasible, iters, residual


def legendre(kernel: JumpKernel, x, alpha,
             max_iter: int = NEWTON_MAX_ITER) -> ConjugateResult:
    """Conjugate L(x, alpha) with maximizer and curvature; raises NonSteep if infeasible."""
    x = np.asarray(x, dtype=float).reshape(kernel.dim)
    alpha = np.asarray(alpha, dtype=float).reshape(kernel.dim)
    values, xi, curv, feasible, iters, residual = legendre_batch(
        kernel, x[None, :], alpha[None, :], want_curvature=True, max_iter=max_iter)
    if not feasible[0]:
        nrm = np.linalg.norm(xi[0])
        escape = xi[0] / nrm if nrm > 0 else np.zeros(kernel.dim)
        raise NonSteep(alpha, escape)
    return ConjugateResult(value=float(values[0]), maximizer=xi[0],
                           curvature=curv[0], iterations=int(iters[0]),
                           residual=float(residual[0]))


# --------------------------------------------------------------------------
# dominating-kernel rate profile
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateProfile:
    """Conjugate L_1 of the dominating Hamiltonian, with +inf encoded explicitly."""

    dominating_kernel: JumpKernel

    def l1(self, alpha) -> float:
        return l1_rate(self, alpha)

    @classmethod
    def from_kernel(cls, kernel: JumpKernel) -> "RateProfile":
        return cls(kernel.dominating())


def l1_rate(profile: RateProfile, alpha) -> float:
    """L_1(alpha); returns math.inf outside the steepness region."""
    try:
        return legendre(profile.dominating_kernel,
                        np.zeros(profile.dominating_kernel.dim), alpha).value
    except NonSteep:
        return math.inf


# --------------------------------------------------------------------------
# piecewise-linear minorant
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseMinorant:
    """Finite maximum of tangent planes of L(x, .): a global minorant.

    Each support point alpha_i contributes the affine function
    <beta_i, alpha> - H(x, beta_i) with beta_i = dL/dalpha(x, alpha_i); by
    Fenchel-Young this lies below L everywhere, for any beta_i, so dominance
    is exact even under solver error.  The gap L - L' is <= gap_target on the
    verification grid covering the construction region.
    """

    support_points: np.ndarray   # (S, d)
    slopes: np.ndarray           # (S, d) tangent covectors beta_i
    intercepts: np.ndarray       # (S,)  equal to -H(x, beta_i)
    gap_target: float
    radius: float
    region_lo: np.ndarray
    region_hi: np.ndarray
    max_gap_observed: float

    def __call__(self, alpha) -> np.ndarray | float:
        alpha = np.asarray(alpha, dtype=float)
        single = alpha.ndim <= 1
        A = np.atleast_2d(alpha)
        vals = A @ self.slopes.T + self.intercepts[None, :]
        out = vals.max(axis=1)
        return float(out[0]) if single else out

    @property
    def n_support(self) -> int:
        return self.support_points.shape[0]

    def to_dict(self) -> dict:
        return {
            "support_points": self.support_points.tolist(),
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
            "gap_target": self.gap_target,
            "radius": self.radius,
            "region_lo": self.region_lo.tolist(),
            "region_hi": self.region_hi.tolist(),
            "max_gap_observed": self.max_gap_observed,
        }


def _feasible_box(kernel: JumpKernel, x: np.ndarray, radius: float,
                  shrink: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box inside the steepness region, clipped to |alpha|<=radius.

    Bisects along each +-axis from 0 to the first infeasible probe, then pulls
    the edge in by the shrink factor.
    """
    d = kernel.dim
    lo = np.empty(d)
    hi = np.empty(d)
    for k in range(d):
        for sign, slot in ((1.0, "hi"), (-1.0, "lo")):
            probe = np.zeros(d)
            probe[k] = sign * radius
            vals, _, _, feas, _, _ = legendre_batch(kernel, x[None, :], probe[None, :])
            if feas[0]:
                edge = sign * radius
            else:
                good, bad = 0.0, sign * radius
                for _ in range(30):
                    mid = 0.5 * (good + bad)
                    probe[k] = mid
                    _, _, _, feas, _, _ = legendre_batch(kernel, x[None, :], probe[None, :])
                    if feas[0]:
                        good = mid
                    else:
                        bad = mid
                edge = shrink * bad
            if slot == "hi":
                hi[k] = edge
            else:
                lo[k] = edge
    return lo, hi


def minorant_from_points(kernel: JumpKernel, x, alphas) -> PiecewiseMinorant:
    """Minorant from explicit support points, no refinement (diagnostic use)."""
    x = np.asarray(x, dtype=float).reshape(kernel.dim)
    A = np.atleast_2d(np.asarray(alphas, dtype=float))
    _, betas, _, feasible, _, _ = legendre_batch(kernel, np.broadcast_to(x, A.shape), A)
    if not feasible.all():
        bad = A[~feasible][0]
        raise NonSteep(bad, np.zeros(kernel.dim))
    intercepts = np.array([-hamiltonian(kernel, x, b) for b in betas])
    r = float(np.linalg.norm(A, axis=1).max())
    return PiecewiseMinorant(A, betas, intercepts, gap_target=math.inf, radius=r,
                             region_lo=A.min(axis=0), region_hi=A.max(axis=0),
                             max_gap_observed=math.nan)


def build_minorant(kernel: JumpKernel, x, radius: float, chi: float,
                   support_cap: int = 4096,
                   initial_per_axis: int = 5,
                   shrink_to_feasible: bool = True,
                   shrink: float = 0.9,
                   verify_factor: int = 10) -> PiecewiseMinorant:
    """Tangent-envelope minorant with gap L - L' <= chi on the construction region.

    Starts from a coarse lattice of support points and bisects any cell whose
    midpoint gap exceeds chi.  When the ball |alpha| <= radius pokes outside
    the steepness region, the region is pulled back inside it (factor `shrink`
    of the detected boundary) unless shrink_to_feasible=False, in which case
    NonSteep propagates.  Raises BudgetExceeded past support_cap points.
    """
    if radius <= 0 or chi <= 0:
        raise ValueError("radius and chi must be positive")
    x = np.asarray(x, dtype=float).reshape(kernel.dim)
    d = kernel.dim

    if shrink_to_feasible:
        lo, hi = _feasible_box(kernel, x, radius, shrink)
    else:
        lo, hi = -radius * np.ones(d), radius * np.ones(d)

    axes = [np.linspace(lo[k], hi[k], initial_per_axis) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    support = [p for p in np.stack([m.ravel() for m in mesh], axis=-1)]

    def solve_points(pts):
        P = np.atleast_2d(np.asarray(pts, dtype=float))
        vals, betas, _, feas, _, _ = legendre_batch(kernel, np.broadcast_to(x, P.shape), P)
        if not feas.all():
            bad = P[~feas][0]
            raise NonSteep(bad, np.zeros(d))
        return vals, betas

    _, betas = solve_points(support)
    slopes = [b for b in betas]
    intercepts = [-hamiltonian(kernel, x, b) for b in betas]

    def lprime(P):
        B = np.stack(slopes)
        c = np.asarray(intercepts)
        return (np.atleast_2d(P) @ B.T + c[None, :]).max(axis=1)

    # cells are axis-aligned boxes; refine on midpoint gap
    cell0 = [(tuple(lo + i * (hi - lo) / (initial_per_axis - 1)),
              tuple(lo + (i + 1) * (hi - lo) / (initial_per_axis - 1)))
             for i in np.ndindex(*([initial_per_axis - 1] * d))]
    queue = list(cell0)
    finest = float(np.max((hi - lo) / (initial_per_axis - 1)))

    while queue:
        cell_lo, cell_hi = queue.pop()
        cell_lo, cell_hi = np.asarray(cell_lo), np.asarray(cell_hi)
        mid = 0.5 * (cell_lo + cell_hi)
        val, beta = solve_points(mid[None, :])
        gap = float(val[0] - lprime(mid[None, :])[0])
        if gap > chi:
            if len(support) >= support_cap:
                raise BudgetExceeded(
                    f"minorant support exceeded cap {support_cap} (gap {gap:.3g} > chi {chi:g})")
            support.append(mid)
            slopes.append(beta[0])
            intercepts.append(-hamiltonian(kernel, x, beta[0]))
            finest = min(finest, float(np.max(cell_hi - cell_lo) / 2))
            # split into 2^d children around the midpoint
            for corner in np.ndindex(*([2] * d)):
                nlo = np.where(np.asarray(corner) == 0, cell_lo, mid)
                nhi = np.where(np.asarray(corner) == 0, mid, cell_hi)
                queue.append((tuple(nlo), tuple(nhi)))

    # verification on a grid 10x finer than the finest refined cell
    spacing = finest / verify_factor
    v_axes = [np.linspace(lo[k], hi[k], max(2, int(round((hi[k] - lo[k]) / spacing)) + 1))
              for k in range(d)]
    v_mesh = np.meshgrid(*v_axes, indexing="ij")
    V = np.stack([m.ravel() for m in v_mesh], axis=-1)
    if V.shape[0] > 200_000:      # keep verification tractable in d=2
        stride = V.shape[0] // 200_000 + 1
        V = V[::stride]
    v_vals, _ = solve_points(V)
    gaps = v_vals - lprime(V)
    max_gap = float(gaps.max())
    if gaps.min() < -1e-9:
        raise AssertionError(f"minorant exceeded L by {-gaps.min():.3e}; solver accuracy bug")

    return PiecewiseMinorant(
        support_points=np.stack(support),
        slopes=np.stack(slopes),
        intercepts=np.asarray(intercepts),
        gap_target=chi,
        radius=radius,
        region_lo=lo,
        region_hi=hi,
        max_gap_observed=max_gap,
    )
