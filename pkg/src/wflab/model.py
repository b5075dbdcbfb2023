"""State-dependent jump kernels and their Hamiltonian.

A kernel is a finite list of jump displacements z_j with state-dependent
intensities lambda_j(x).  The Hamiltonian

    H(x, xi) = sum_j lambda_j(x) * (exp(<z_j, xi>) - 1 - <z_j, xi>)

is the cumulant functional of the compensated jump measure: convex in xi,
nonnegative, and zero at xi = 0.  Rates are drawn from a small closed-form
expression language (constants, affine forms, bounded sigmoids) so kernel
definitions can round-trip through JSON bit-exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ExponentOverflow, HypothesisViolation

EXPONENT_CAP = 700.0


# --------------------------------------------------------------------------
# rate expression language
# --------------------------------------------------------------------------

class RateExpr:
    """Closed-form nonnegative rate expression evaluable at single or batched states."""

    kind = "abstract"

    def __call__(self, x: np.ndarray) -> np.ndarray | float:
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False

    def sup_bound(self) -> float:
        """Supremum of the rate over all states (may be +inf)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantRate(RateExpr):
    value: float

    kind = "constant"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            return self.value
        return np.full(x.shape[0], self.value)

    @property
    def is_constant(self):
        return True

    def sup_bound(self):
        return float(self.value)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class AffineRate(RateExpr):
    """intercept + <coeffs, x>; unbounded unless all coefficients vanish."""

    intercept: float
    coeffs: tuple[float, ...]

    kind = "affine"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.coeffs, dtype=float)
        if x.ndim <= 1:
            return float(self.intercept + x @ c)
        return self.intercept + x @ c

    @property
    def is_constant(self):
        return all(c == 0.0 for c in self.coeffs)

    def sup_bound(self):
        if self.is_constant:
            return float(self.intercept)
        return math.inf

    def to_dict(self):
        return {"kind": "affine", "intercept": self.intercept, "coeffs": list(self.coeffs)}


@dataclass(frozen=True)
class SigmoidRate(RateExpr):
    """base + scale / (1 + exp(-<a, x> + b)); bounded between base and base + scale."""

    base: float
    scale: float
    a: tuple[float, ...]
    b: float

    kind = "sigmoid"

    def __post_init__(self):
        lo = min(self.base, self.base + self.scale)
        if lo < 0:
            raise ValueError(f"sigmoid rate can go negative (asymptote {lo})")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        a = np.asarray(self.a, dtype=float)
        t = np.clip(-(x @ a) + self.b, -EXPONENT_CAP, EXPONENT_CAP)
        out = self.base + self.scale / (1.0 + np.exp(t))
        if x.ndim <= 1:
            return float(out)
        return out

    @property
    def is_constant(self):
        return self.scale == 0.0 or all(c == 0.0 for c in self.a)

    def sup_bound(self):
        if self.is_constant:
            # degenerate: sigmoid factor frozen at 1/(1+e^b)
            return float(self.base + self.scale / (1.0 + math.exp(self.b)))
        return float(self.base + max(self.scale, 0.0))

    def to_dict(self):
        return {"kind": "sigmoid", "base": self.base, "scale": self.scale, "a": list(self.a), "b": self.b}


def rate_from_dict(d: dict) -> RateExpr:
    kind = d.get("kind")
    if kind == "constant":
        return ConstantRate(float(d["value"]))
    if kind == "affine":
        return AffineRate(float(d["intercept"]), tuple(float(c) for c in d["coeffs"]))
    if kind == "sigmoid":
        return SigmoidRate(float(d["base"]), float(d["scale"]),
                           tuple(float(c) for c in d["a"]), float(d["b"]))
    raise ValueError(f"unknown rate expression kind {kind!r}")


# --------------------------------------------------------------------------
# kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JumpAtom:
    z: np.ndarray
    rate: RateExpr


@dataclass(frozen=True, eq=False)
class JumpKernel:
    """Finite-activity jump kernel: atoms (z_j, lambda_j(x)) with a global rate bound.

    rate_bound is the user-asserted uniform bound on every lambda_j(x); the
    simulator thins candidate events against it, so a violation is detected
    (and raised) rather than silently biasing the law.
    """

    dim: int
    atoms: tuple[JumpAtom, ...]
    rate_bound: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.atoms:
            raise ValueError("kernel needs at least one atom")
        if not (self.rate_bound >= 0 and math.isfinite(self.rate_bound)):
            raise ValueError("rate_bound must be finite and nonnegative")
        atoms = tuple(JumpAtom(np.asarray(a.z, dtype=float).reshape(self.dim), a.rate)
                      for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not any(np.any(a.z != 0.0) for a in atoms):
            raise ValueError("kernel needs at least one atom with nonzero displacement")
        object.__setattr__(self, "_Z", np.stack([a.z for a in atoms]))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def displacements(self) -> np.ndarray:
        """(J, d) array of jump vectors."""
        return self._Z

    @property
    def state_independent(self) -> bool:
        return all(a.rate.is_constant for a in self.atoms)

    def rates(self, x) -> np.ndarray:
        """Rates at one state (J,) or a batch of states (n, J)."""
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            return np.array([a.rate(x) for a in self.atoms], dtype=float)
        return np.stack([np.broadcast_to(a.rate(x), x.shape[0]) for a in self.atoms], axis=-1)

    def compensator_drift(self, x) -> np.ndarray:
        """Drift -sum_j lambda_j(x) z_j of the compensated process; (d,) or (n, d)."""
        lam = self.rates(x)
        return -(lam @ self._Z)

    def dominating(self) -> "JumpKernel":
        """State-independent kernel with per-atom rates sup_x lambda_j(x)."""
        sups = [a.rate.sup_bound() for a in self.atoms]
        if not all(math.isfinite(s) for s in sups):
            raise ValueError("kernel has an atom with unbounded rate; no dominating kernel exists")
        atoms = tuple(JumpAtom(a.z, ConstantRate(s)) for a, s in zip(self.atoms, sups))
        return JumpKernel(self.dim, atoms, max(sups))

    def validate_rates(self, points: np.ndarray) -> list[str]:
        """Probe rates at given states; return violation messages (empty if clean)."""
        problems = []
        lam = self.rates(np.atleast_2d(points))
        for j in range(self.n_atoms):
            col = lam[:, j]
            bad = np.where(col < 0)[0]
            if bad.size:
                i = int(bad[0])
                problems.append(f"atom {j} rate negative ({col[i]:.6g}) at probe x={points[i]}")
            over = np.where(col > self.rate_bound * (1 + 1e-12))[0]
            if over.size:
                i = int(over[0])
                problems.append(f"atom {j} rate {col[i]:.6g} exceeds rate_bound "
                                f"{self.rate_bound:.6g} at probe x={points[i]}")
        return problems

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "atoms": [{"z": list(map(float, a.z)), "rate": a.rate.to_dict()} for a in self.atoms],
            "rate_bound": self.rate_bound,
        }


def kernel_from_dict(d: dict) -> JumpKernel:
    atoms = tuple(JumpAtom(np.asarray(a["z"], dtype=float), rate_from_dict(a["rate"]))
                  for a in d["atoms"])
    return JumpKernel(int(d["dim"]), atoms, float(d["rate_bound"]))


def kernel_to_json(kernel: JumpKernel) -> str:
    """Canonical JSON form; serialize(parse(s)) == s for canonical s."""
    return json.dumps(kernel.to_dict(), sort_keys=True, separators=(", ", ": "), indent=2) + "\n"


def kernel_from_json(text: str) -> JumpKernel:
    return kernel_from_dict(json.loads(text))


def unit_jump_kernel(rate: float = 1.0) -> JumpKernel:
    """1d kernel with a single +1 jump at constant rate; the workhorse test model."""
    return JumpKernel(1, (JumpAtom(np.array([1.0]), ConstantRate(rate)),), rate)


def symmetric_kernel(rate_each: float = 0.5) -> JumpKernel:
    """1d kernel with +-1 jumps at equal constant rates; H(xi) = 2*rate*(cosh(xi)-1)."""
    atoms = (JumpAtom(np.array([1.0]), ConstantRate(rate_each)),
             JumpAtom(np.array([-1.0]), ConstantRate(rate_each)))
    return JumpKernel(1, atoms, rate_each)


# --------------------------------------------------------------------------
# Hamiltonian
# --------------------------------------------------------------------------

def hamiltonian(kernel: JumpKernel, x, xi, cap: float = EXPONENT_CAP) -> float:
    """H(x, xi) = sum_j lambda_j(x) (e^{<z_j,xi>} - 1 - <z_j,xi>), >= 0, H(x,0) = 0."""
    xi = np.asarray(xi, dtype=float).reshape(kernel.dim)
    dots = kernel.displacements @ xi
    too_big = np.where(dots > cap)[0]
    if too_big.size:
        j = int(too_big[0])
        raise ExponentOverflow(dots[j], cap, atom=j)
    lam = kernel.rates(x)
    return float(lam @ (np.expm1(dots) - dots))


def hamiltonian_derivatives(kernel: JumpKernel, x, xi, cap: float = EXPONENT_CAP):
    """Gradient and Hessian of H in xi at (x, xi)."""
    xi = np.asarray(xi, dtype=float).reshape(kernel.dim)
    Z = kernel.displacements
    dots = Z @ xi
    too_big = np.where(dots > cap)[0]
    if too_big.size:
        j = int(too_big[0])
        raise ExponentOverflow(dots[j], cap, atom=j)
    lam = kernel.rates(x)
    grad = (lam * np.expm1(dots)) @ Z
    hess = (Z.T * (lam * np.exp(dots))) @ Z
    return grad, hess


def hamiltonian_profile(kernel: JumpKernel, xi) -> np.ndarray:
    """Per-atom coefficients e^{<z_j,xi>} - 1 - <z_j,xi>, so H(x,xi) = rates(x) @ coeffs.

    Used by the simulator: for a frozen covector the state enters only through
    the rates, so H along a trajectory is a single matrix product.
    """
    xi = np.asarray(xi, dtype=float).reshape(kernel.dim)
    dots = kernel.displacements @ xi
    too_big = np.where(dots > EXPONENT_CAP)[0]
    if too_big.size:
        j = int(too_big[0])
        raise ExponentOverflow(dots[j], EXPONENT_CAP, atom=j)
    return np.expm1(dots) - dots


@dataclass(frozen=True, eq=False)
class DominatingHamiltonian:
    """Uniform-in-x convex bound H_1(xi), realized as a state-independent kernel."""

    kernel: JumpKernel

    def __post_init__(self):
        if not self.kernel.state_independent:
            raise ValueError("dominating Hamiltonian must come from a state-independent kernel")

    def __call__(self, xi) -> float:
        return hamiltonian(self.kernel, np.zeros(self.kernel.dim), xi)

    @classmethod
    def from_kernel(cls, kernel: JumpKernel) -> "DominatingHamiltonian":
        return cls(kernel.dominating())


# --------------------------------------------------------------------------
# hypothesis diagnostics
# --------------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    """Empirical hypothesis checks over probe grids.

    dominance_gap_max : max of H(x,xi) - H_1(xi) over probes (<= 0 required)
    bound_M           : max of L and |dL/dalpha| over probed |alpha| <= R
    curvature_m       : min eigenvalue of the alpha-Hessian of L over the probed ball
    modulus           : (delta', sup |L(x',a)-L(x,a)|/(1+L(x,a))) for shrinking delta'
    growth            : (|alpha|, min_dir L_1(alpha)/|alpha|) along probe rays
    growth_thresholds : requested constant -> first probed radius beyond which
                        the ratio stays above it (None if never)
    """

    radius: float
    dominance_gap_max: float
    dominance_argmax: tuple
    bound_M: float
    curvature_m: float
    infeasible_alpha_count: int
    modulus: list
    growth: list
    growth_thresholds: dict
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "dominance_gap_max": self.dominance_gap_max,
            "bound_M": self.bound_M,
            "curvature_m": self.curvature_m,
            "infeasible_alpha_count": self.infeasible_alpha_count,
            "modulus": [[d, v] for d, v in self.modulus],
            "growth": [[r, v] for r, v in self.growth],
            "growth_thresholds": {str(k): v for k, v in self.growth_thresholds.items()},
            "violations": list(self.violations),
            "ok": self.ok,
        }


def _halton_box(n: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Deterministic low-discrepancy probe points in a box."""
    d = lo.size
    sampler = qmc.Halton(d=d, scramble=False)
    u = sampler.random(n)
    return lo + u * (hi - lo)


def _alpha_ball_grid(dim: int, radius: float, per_axis: int) -> np.ndarray:
    axes = [np.linspace(-radius, radius, per_axis)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(pts, axis=1) <= radius + 1e-12
    return pts[keep]


def check_hypotheses(kernel: JumpKernel,
                     h1: DominatingHamiltonian,
                     radius: float,
                     x_box: tuple | None = None,
                     n_x: int = 32,
                     n_alpha: int = 32,
                     xi_radius: float = 3.0,
                     n_xi: int = 32,
                     n_modulus_scales: int = 4,
                     growth_constants: tuple = (1.0, 2.0, 5.0),
                     growth_radii: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0),
                     raise_on_violation: bool = True) -> DiagnosticsReport:
    """Probe the standing hypotheses: uniform dominance of H by H_1, finiteness /
    uniform curvature of the conjugate on a ball, the x-continuity modulus of L,
    and superlinear growth of the dominating conjugate.

    Probes are deterministic (Halton states, regular grids).  Raises
    HypothesisViolation listing the failures unless raise_on_violation=False.
    """
    from .conjugate import legendre_batch  # deferred: conjugate imports model

    if radius <= 0:
        raise ValueError("radius must be positive")
    d = kernel.dim
    if x_box is None:
        lo, hi = -np.ones(d), np.ones(d)
    else:
        lo = np.asarray(x_box[0], dtype=float).reshape(d)
        hi = np.asarray(x_box[1], dtype=float).reshape(d)

    violations: list[str] = []
    x_probes = _halton_box(n_x, lo, hi)

    for msg in kernel.validate_rates(x_probes):
        violations.append(f"kernel validity: {msg}")

    # H.1: H(x, xi) <= H_1(xi) on a xi grid
    xi_probes = _alpha_ball_grid(d, xi_radius, n_xi)
    gap_max, gap_arg = -math.inf, (None, None)
    coeff = np.stack([hamiltonian_profile(kernel, xi) for xi in xi_probes])  # (nxi, J)
    lam = kernel.rates(x_probes)                                             # (nx, J)
    h_vals = lam @ coeff.T                                                   # (nx, nxi)
    h1_vals = np.array([h1(xi) for xi in xi_probes])
    gaps = h_vals - h1_vals[None, :]
    i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
    gap_max = float(gaps[i, j])
    gap_arg = (x_probes[i].tolist(), xi_probes[j].tolist())
    if gap_max > 1e-9:
        violations.append(f"H.1: H(x,xi) - H_1(xi) = {gap_max:.3e} > 0 at x={gap_arg[0]}, xi={gap_arg[1]}")

    # H.2: L finite with bounded value/slope and curvature >= m on |alpha| <= R.
    # Probes falling outside the steepness region are excluded from M and m and
    # reported by count; only an entirely infeasible ball is a violation.
    alpha_probes = _alpha_ball_grid(d, radius, n_alpha)
    M_val = 0.0
    m_val = math.inf
    infeasible = 0
    L_table = np.full((x_probes.shape[0], alpha_probes.shape[0]), math.inf)
    feasible_any = False
    for ix, x in enumerate(x_probes):
        values, maximizers, curvatures, feasible, _, _ = legendre_batch(
            kernel, np.broadcast_to(x, (alpha_probes.shape[0], d)), alpha_probes,
            want_curvature=True)
        L_table[ix] = np.where(feasible, values, math.inf)
        infeasible += int((~feasible).sum())
        if not feasible.any():
            continue
        feasible_any = True
        M_val = max(M_val, float(values[feasible].max()),
                    float(np.linalg.norm(maximizers[feasible], axis=1).max()))
        eigs = np.linalg.eigvalsh(curvatures[feasible])
        m_val = min(m_val, float(eigs[:, 0].min()))
    if not feasible_any:
        violations.append(f"H.2: L(x, alpha) is +inf on the whole probed ball |alpha| <= {radius}")
        m_val = 0.0
    elif m_val <= 0:
        violations.append(f"H.2: conjugate curvature not uniformly positive (min eigenvalue {m_val:.3e})")

    # x-continuity modulus of L at shrinking pair distances
    diam = float(np.linalg.norm(hi - lo))
    modulus = []
    if diam > 0 and x_probes.shape[0] > 1:
        dists = np.linalg.norm(x_probes[:, None, :] - x_probes[None, :, :], axis=-1)
        both_feasible = np.isfinite(L_table[:, None, :]) & np.isfinite(L_table[None, :, :])
        with np.errstate(invalid="ignore"):
            rel = np.abs(L_table[:, None, :] - L_table[None, :, :]) / (1.0 + L_table[:, None, :])
        rel = np.where(both_feasible, rel, 0.0)
        for k in range(1, n_modulus_scales + 1):
            delta = diam * 2.0 ** (-k)
            mask = (dists < delta) & (dists > 0)
            if not mask.any():
                modulus.append((delta, 0.0))
                continue
            vals = np.where(mask[:, :, None], rel, 0.0)
            modulus.append((delta, float(vals.max())))
    else:
        modulus = [(0.0, 0.0)]

    # H.3: superlinear growth of L_1 along axis rays
    dom = h1.kernel
    dirs = np.concatenate([np.eye(d), -np.eye(d)])
    growth = []
    for r in growth_radii:
        A = dirs * r
        values, _, _, feasible, _, _ = legendre_batch(dom, np.zeros((A.shape[0], d)), A)
        ratios = np.where(feasible, values, math.inf) / r
        growth.append((float(r), float(ratios.min())))
    ratios_seq = [v for _, v in growth]
    finite_seq = [v for v in ratios_seq if math.isfinite(v)]
    if any(b < a - 1e-9 for a, b in zip(finite_seq, finite_seq[1:])):
        violations.append("H.3: L_1(alpha)/|alpha| not nondecreasing along probed rays")
    thresholds: dict = {}
    for C in growth_constants:
        K = None
        for idx, (r, v) in enumerate(growth):
            if all(w >= C for _, w in growth[idx:]):
                K = r
                break
        thresholds[C] = K
        if K is None:
            violations.append(f"H.3: L_1(alpha)/|alpha| never exceeds {C} within probed radii")

    report = DiagnosticsReport(
        radius=radius,
        dominance_gap_max=gap_max,
        dominance_argmax=gap_arg,
        bound_M=M_val,
        curvature_m=m_val if math.isfinite(m_val) else 0.0,
        infeasible_alpha_count=infeasible,
        modulus=modulus,
        growth=growth,
        growth_thresholds=thresholds,
        violations=violations,
    )
    if violations and raise_on_violation:
        raise HypothesisViolation(violations, report)
    return report
