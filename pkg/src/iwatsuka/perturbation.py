"""Contour spectral projections and the perturbation series of the ground band.

For a compact potential perturbation w, the mixed field at strength eps
shifts the fiber potential by ell_eps = eps*omega + eps^2*w^2 with
omega = -v*w.  The scalar F_xi(eps), built from the perturbed spectral
projection, expands as A_1*eps + A_2*eps^2 + ...; its second coefficient
A_2 = ||w phi_1||^2 - sum_{j>=2} omega_j^2 / (lambda_j - lambda_1)
is coercive on the kappa window of momenta, which is the engine of the
current-data uniqueness experiments.  A_2 is computed three ways here:
by the truncated eigenfunction sum with a rigorous tail bound, by a
resolvent contour integral, and by a polynomial fit of F_xi over an
epsilon ladder.

Numerical note: the shift lambda_{eps,1} - lambda_1 is never formed by
subtracting eigenvalues.  The exact pairing identity
    shift = <ell_eps phi_eps, phi_1> / <phi_eps, phi_1>
avoids the catastrophic cancellation that would otherwise dominate the
epsilon ladder at eps ~ 1e-3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .errors import ConfigError, ContourError, NumericalError
from .fields import MagneticField, PerturbationW, eval_a
from .spectral import (
    DEFAULT_N,
    FiberOperator,
    assemble,
    choose_window,
    l2_inner,
    lowest_eigenpairs,
)

DEFAULT_CONTOUR_NODES = 64
A2_DEFAULT_J_MAX = 60


@dataclass(frozen=True)
class ContourSpec:
    """Circle of radius rho around the ground eigenvalue, trapezoid nodes."""

    rho: float
    nodes: int = DEFAULT_CONTOUR_NODES

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("contour radius must be positive")
        if self.nodes < 16 or self.nodes % 2:
            raise ConfigError("contour needs an even number of nodes, >= 16")


def default_contour(field: MagneticField, nodes: int = DEFAULT_CONTOUR_NODES) -> ContourSpec:
    """Midpoint radius rho = (3 b_minus - b_plus)/2, maximizing both clearances."""
    gap = 3.0 * field.b_minus - field.b_plus
    if gap <= 0:
        raise ConfigError("contour projection needs a gap-admissible field")
    return ContourSpec(rho=0.5 * gap, nodes=nodes)


def check_contour_radius(field: MagneticField, spec: ContourSpec):
    gap = 3.0 * field.b_minus - field.b_plus
    if not spec.rho < gap:
        raise ConfigError(f"contour radius {spec.rho} not inside (0, {gap})")


class ContourProjection:
    """Rank-1 spectral projection as a trapezoid sum of resolvent solves."""

    def __init__(self, op: FiberOperator, center: float, spec: ContourSpec):
        k_probe = min(6, op.grid.n)
        probe = lowest_eigenpairs(op, k_probe)
        vals = np.array([p.lam for p in probe])
        if abs(vals[0] - center) >= spec.rho - 1e-6:
            raise ContourError(
                f"lowest eigenvalue {vals[0]:.12g} not strictly inside the contour "
                f"around {center:.12g} (rho={spec.rho})"
            )
        if k_probe > 1 and vals[1] - center <= spec.rho + 1e-6:
            raise ContourError(
                f"second eigenvalue {vals[1]:.12g} inside or on the contour; "
                "gap certificate violated"
            )
        theta = 2.0 * np.pi * np.arange(spec.nodes) / spec.nodes
        self.phases = np.exp(1j * theta)
        self.zs = center + spec.rho * self.phases
        for z in self.zs:
            if np.min(np.abs(vals - z)) < 1e-6:
                raise ContourError(f"contour node {z:.12g} within 1e-6 of an eigenvalue")
        self.op = op
        self.center = center
        self.spec = spec

    def _resolvent_solve(self, z: complex, rhs: np.ndarray) -> np.ndarray:
        n = self.op.grid.n
        ab = np.zeros((3, n), dtype=complex)
        ab[0, 1:] = self.op.offdiag
        ab[1, :] = self.op.diag - z
        ab[2, :-1] = self.op.offdiag
        return solve_banded((1, 1), ab, rhs)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """P v = -(rho/M) sum_m e^{i theta_m} (T - z_m)^{-1} v, real part."""
        acc = np.zeros(len(v), dtype=complex)
        for phase, z in zip(self.phases, self.zs):
            acc += phase * self._resolvent_solve(z, v)
        acc *= -self.spec.rho / self.spec.nodes
        imag = float(np.linalg.norm(acc.imag))
        if imag > 1e-10 * (1.0 + float(np.linalg.norm(acc.real))):
            raise ContourError(f"projection lost realness: |imag| = {imag:.3e}")
        return acc.real


def projection_contour(op: FiberOperator, lambda1: float, spec: ContourSpec) -> ContourProjection:
    """Contour projection onto the eigenvalue enclosed by C(lambda1, rho)."""
    return ContourProjection(op, lambda1, spec)


# ---------------------------------------------------------------------------
# perturbation scalars

@dataclass(frozen=True)
class EpsilonBounds:
    C: float            # delta * (M(xi) + delta)
    eps_star: float     # min(1, (3 b_minus - b_plus - rho) / C)
    eps_ceiling: float  # min(eps_star, rho / C)


def coupling_bound(field: MagneticField, w: PerturbationW, xi: float) -> float:
    """C(xi) = delta * (M(xi) + delta) with delta = sup|w|, M = sup of |v| on supp w."""
    delta = w.sup_norm
    r = w.support_radius
    m_xi = 2.0 * max(abs(xi - eval_a(field, -r)), abs(xi - eval_a(field, r)))
    return delta * (m_xi + delta)


def epsilon_bounds(field: MagneticField, w: PerturbationW, xi: float,
                   spec: ContourSpec) -> EpsilonBounds:
    check_contour_radius(field, spec)
    gap = 3.0 * field.b_minus - field.b_plus
    c = coupling_bound(field, w, xi)
    if c == 0.0:
        return EpsilonBounds(C=0.0, eps_star=1.0, eps_ceiling=1.0)
    eps_star = min(1.0, (gap - spec.rho) / c)
    return EpsilonBounds(C=c, eps_star=eps_star, eps_ceiling=min(eps_star, spec.rho / c))


@dataclass(frozen=True)
class FxiDetail:
    value: float            # eigenvalue-difference form
    inner_value: float      # <P_eps phi_1, ell_eps phi_1>
    lambda1: float
    lambda_eps1: float
    shift: float            # lambda_eps1 - lambda_1, cancellation-free
    overlap: float          # <P_eps phi_1, phi_1>
    bounds: EpsilonBounds


def _perturbation_arrays(field, w, xi, grid):
    wvals = w.w(grid.nodes)
    v = 2.0 * (xi - eval_a(field, grid.nodes))
    omega = -v * wvals
    return wvals, omega


def f_xi_detail(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    epsilon: float,
    spec: ContourSpec | None = None,
    n: int = DEFAULT_N,
    grid=None,
) -> FxiDetail:
    """Both forms of F_xi(eps) at one (xi, eps), with the admissibility bounds.

    Pass the same ``grid`` to every route that is to be cross-compared;
    distinct windows discretize differently and the routes then agree only
    to O(h^2) instead of to solver precision.
    """
    if field.kind == "perturbed":
        raise ConfigError("pass the unperturbed base field together with w")
    if spec is None:
        spec = default_contour(field)
    bounds = epsilon_bounds(field, w, xi, spec)
    if not 0.0 < epsilon < bounds.eps_ceiling:
        raise ConfigError(
            f"epsilon={epsilon} outside the admissible range (0, {bounds.eps_ceiling:.6g}) "
            f"at xi={xi} (coupling bound C={bounds.C:.6g}, rho={spec.rho})"
        )

    if grid is None:
        grid = choose_window(field, xi, k=3, n=n)
    base_op = assemble(field, xi, grid)
    ground, second = lowest_eigenpairs(base_op, 2)
    lam1, phi1 = ground.lam, ground.phi

    wvals, omega = _perturbation_arrays(field, w, xi, grid)
    ell = epsilon * omega + epsilon**2 * wvals**2
    pert_op = FiberOperator(xi=xi, diag=base_op.diag + ell, offdiag=base_op.offdiag, grid=grid)
    (eps_ground,) = lowest_eigenpairs(pert_op, 1)
    phi_eps = eps_ground.phi

    denom = l2_inner(grid, phi_eps, phi1)
    shift = l2_inner(grid, ell * phi_eps, phi1) / denom
    naive = eps_ground.lam - lam1
    if abs(shift - naive) > 1e-9 * (1.0 + abs(lam1)):
        raise NumericalError(
            f"eigenvalue shift identity broke down at xi={xi}, eps={epsilon}: "
            f"{shift:.6e} vs {naive:.6e}"
        )

    proj = ContourProjection(pert_op, lam1, spec)
    p_phi1 = proj.apply(phi1)
    overlap = l2_inner(grid, p_phi1, phi1)
    value = shift * overlap
    inner_value = l2_inner(grid, p_phi1, ell * phi1)
    if abs(inner_value - value) > 1e-8 * (1.0 + abs(value)):
        raise NumericalError(
            f"F forms disagree at xi={xi}, eps={epsilon}: "
            f"inner={inner_value:.12e}, difference={value:.12e}"
        )
    return FxiDetail(
        value=value,
        inner_value=inner_value,
        lambda1=lam1,
        lambda_eps1=lam1 + shift,
        shift=shift,
        overlap=overlap,
        bounds=bounds,
    )


def F_xi(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    epsilon: float,
    spec: ContourSpec | None = None,
    n: int = DEFAULT_N,
    grid=None,
) -> float:
    """F_xi(eps) in its eigenvalue-difference form; both forms checked internally."""
    return f_xi_detail(field, w, xi, epsilon, spec, n, grid).value


def fit_series_coefficients(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    epsilons,
    degree: int = 4,
    spec: ContourSpec | None = None,
    n: int = DEFAULT_N,
    grid=None,
) -> np.ndarray:
    """Least-squares coefficients (A_1 .. A_degree) of F_xi on an epsilon ladder."""
    eps = np.asarray(sorted(float(e) for e in epsilons))
    if len(eps) <= degree:
        raise ConfigError("need more epsilon samples than fit coefficients")
    F = np.array([F_xi(field, w, xi, e, spec, n, grid) for e in eps])
    V = np.vander(eps, degree + 1, increasing=True)[:, 1:]
    scale = np.linalg.norm(V, axis=0)
    coef, *_ = np.linalg.lstsq(V / scale, F, rcond=None)
    return coef / scale


@dataclass(frozen=True)
class A2Result:
    value: float            # truncated sum form
    tail_bound: float
    w_phi_norm_sq: float    # ||w phi_1||^2
    coupling_norm_sq: float  # ||omega phi_1||^2
    j_max: int


def A2_sum(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    j_max: int | None = A2_DEFAULT_J_MAX,
    n: int = DEFAULT_N,
    grid=None,
) -> A2Result:
    """A_2 by the eigenfunction sum, truncated at j_max with a Plancherel tail bound.

    ``j_max=None`` sums over the complete discrete spectrum, which makes
    the value algebraically identical to the contour route on the same
    grid (finite-dimensional residue theorem) and the tail bound zero.
    Hat-basis perturbations have derivative kinks, so truncated tails
    decay only like j_max^(-5/2); use the full sum when two routes must
    agree far below the tail bound.
    """
    if j_max is not None and j_max < 6:
        raise ConfigError("A2 sum needs j_max >= 6")
    if grid is None:
        grid = choose_window(field, xi, k=(j_max if j_max is not None else 6), n=n)
    op = assemble(field, xi, grid)

    if j_max is None:
        vals, vecs = eigh_tridiagonal(op.diag, op.offdiag, lapack_driver="stemr")
        lam1 = float(vals[0])
        phi1 = vecs[:, 0] / np.sqrt(grid.h)
        if phi1.sum() < 0:
            phi1 = -phi1
        wvals, omega = _perturbation_arrays(field, w, xi, grid)
        omega_phi = omega * phi1
        w_phi_sq = l2_inner(grid, wvals * phi1, wvals * phi1)
        total_sq = l2_inner(grid, omega_phi, omega_phi)
        omega_j = np.sqrt(grid.h) * (vecs.T @ omega_phi)
        value = w_phi_sq - float(np.sum(omega_j[1:] ** 2 / (vals[1:] - lam1)))
        return A2Result(value, 0.0, w_phi_sq, total_sq, grid.n)

    tail_gap = (2 * j_max + 1) * field.b_minus - field.b_plus
    if tail_gap <= 0:
        raise ConfigError("tail gap not positive; raise j_max or fix the field")
    pairs = lowest_eigenpairs(op, j_max)
    lam1, phi1 = pairs[0].lam, pairs[0].phi

    wvals, omega = _perturbation_arrays(field, w, xi, grid)
    omega_phi = omega * phi1
    w_phi_sq = l2_inner(grid, wvals * phi1, wvals * phi1)
    total_sq = l2_inner(grid, omega_phi, omega_phi)

    omega_j = np.array([l2_inner(grid, omega_phi, p.phi) for p in pairs])
    gaps = np.array([p.lam - lam1 for p in pairs[1:]])
    value = w_phi_sq - float(np.sum(omega_j[1:] ** 2 / gaps))
    captured = float(np.sum(omega_j**2))
    tail_bound = max(0.0, total_sq - captured) / tail_gap
    return A2Result(
        value=value,
        tail_bound=tail_bound,
        w_phi_norm_sq=w_phi_sq,
        coupling_norm_sq=total_sq,
        j_max=j_max,
    )


def A2_contour(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    spec: ContourSpec | None = None,
    n: int = DEFAULT_N,
    grid=None,
) -> float:
    """A_2 by nested resolvent solves around the ground eigenvalue."""
    if spec is None:
        spec = default_contour(field)
    check_contour_radius(field, spec)
    if grid is None:
        grid = choose_window(field, xi, k=3, n=n)
    op = assemble(field, xi, grid)
    ground, second = lowest_eigenpairs(op, 2)
    lam1, phi1 = ground.lam, ground.phi
    if second.lam - lam1 <= spec.rho:
        raise ContourError("gap certificate violated for the A2 contour")

    wvals, omega = _perturbation_arrays(field, w, xi, grid)
    w_phi_sq = l2_inner(grid, wvals * phi1, wvals * phi1)

    proj = ContourProjection(op, lam1, spec)
    acc = 0.0 + 0.0j
    for phase, z in zip(proj.phases, proj.zs):
        u1 = proj._resolvent_solve(z, phi1.astype(complex))
        u2 = proj._resolvent_solve(z, omega * u1)
        f_z = grid.h * np.dot(omega * u2, phi1)
        acc += phase * f_z
    integral = acc * spec.rho / spec.nodes
    if abs(integral.imag) > 1e-10 * (1.0 + abs(integral.real)):
        raise ContourError(f"A2 contour lost realness: imag={integral.imag:.3e}")
    return w_phi_sq + integral.real


# ---------------------------------------------------------------------------
# kappa window

def r_kappa(field: MagneticField, kappa: float) -> float:
    """Support threshold sqrt(1-kappa) * sqrt(3 b_minus - b_plus) / (2 b_plus)."""
    if not 0.0 < kappa < 1.0:
        raise ConfigError("kappa must lie in (0, 1)")
    gap = 3.0 * field.b_minus - field.b_plus
    if gap <= 0:
        raise ConfigError("kappa window needs a gap-admissible field")
    return math.sqrt((1.0 - kappa) * gap) / (2.0 * field.b_plus)


def kappa_window(field: MagneticField, r: float, kappa: float) -> tuple[float, float]:
    """Momentum window (-xi_kappa, xi_kappa) with xi_kappa = b_plus*(r(kappa) - r)."""
    rk = r_kappa(field, kappa)
    if not 0.0 <= r < rk:
        raise ConfigError(f"support radius {r} must be below r(kappa)={rk:.6g}")
    xi_k = field.b_plus * (rk - r)
    return (-xi_k, xi_k)


# ---------------------------------------------------------------------------
# aggregate report

@dataclass(frozen=True)
class PerturbReport:
    xi: float
    epsilons: tuple[float, ...]
    lambda1: float
    lambda_eps1: tuple[float, ...]
    F_values: tuple[float, ...]
    A2: float
    A2_tail_bound: float
    A2_contour: float
    w_phi_norm_sq: float
    coupling_bound: float
    eps_ceiling: float
    kappa: float | None
    window: tuple[float, float] | None

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "epsilons": list(self.epsilons),
            "lambda1": self.lambda1,
            "lambda_eps1": list(self.lambda_eps1),
            "F_values": list(self.F_values),
            "A2": self.A2,
            "A2_tail_bound": self.A2_tail_bound,
            "A2_contour": self.A2_contour,
            "w_phi_norm_sq": self.w_phi_norm_sq,
            "coupling_bound": self.coupling_bound,
            "eps_ceiling": self.eps_ceiling,
            "kappa": self.kappa,
            "window": list(self.window) if self.window else None,
        }


def perturb_report(
    field: MagneticField,
    w: PerturbationW,
    xi: float,
    epsilons,
    spec: ContourSpec | None = None,
    kappa: float | None = None,
    j_max: int = A2_DEFAULT_J_MAX,
    n: int = DEFAULT_N,
) -> PerturbReport:
    """Eigenvalue shifts, F values and A2 routes at one momentum, one shared grid."""
    if spec is None:
        spec = default_contour(field)
    grid = choose_window(field, xi, k=(j_max if j_max is not None else 6), n=n)
    details = [f_xi_detail(field, w, xi, e, spec, n, grid) for e in epsilons]
    a2 = A2_sum(field, w, xi, j_max=j_max, n=n, grid=grid)
    a2c = A2_contour(field, w, xi, spec, n, grid)
    window = kappa_window(field, w.support_radius, kappa) if kappa is not None else None
    bounds = details[0].bounds if details else epsilon_bounds(field, w, xi, spec)
    lam1 = details[0].lambda1 if details else np.nan
    return PerturbReport(
        xi=xi,
        epsilons=tuple(float(e) for e in epsilons),
        lambda1=lam1,
        lambda_eps1=tuple(d.lambda_eps1 for d in details),
        F_values=tuple(d.value for d in details),
        A2=a2.value,
        A2_tail_bound=a2.tail_bound,
        A2_contour=a2c,
        w_phi_norm_sq=a2.w_phi_norm_sq,
        coupling_bound=bounds.C,
        eps_ceiling=bounds.eps_ceiling,
        kappa=kappa,
        window=window,
    )
