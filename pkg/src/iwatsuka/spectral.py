"""Fiber operators h(xi) = -d^2/dx^2 + (xi - a(x))^2 and their low eigenpairs.

The real line is truncated to a window centered on the classical center
x* = a^{-1}(xi), where the confining potential is smallest.  With the
margin enforced by :func:`choose_window` the Dirichlet truncation error on
the requested eigenvalues sits far below the O(h^2) discretization error
of the 3-point stencil, so the symmetric tridiagonal matrix is the whole
story.  Eigenvalues come from bisection on the Sturm sequence and
eigenvectors from inverse iteration (LAPACK stebz/stein), which keeps
every fiber solve deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import ConfigError, EigensolveError, WindowError
from .fields import MagneticField, a_inverse, eval_a

DEFAULT_N = 2000
DEFAULT_HALF_WIDTH_FACTOR = 12.0
MAX_HALF_WIDTH_FACTOR = 1e4
DIRICHLET_MARGIN = 25.0
RESIDUAL_RTOL = 1e-9
SEPARATION_MIN = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform grid of n interior nodes with homogeneous Dirichlet ends."""

    x_left: float
    x_right: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ConfigError("grid needs at least 3 interior nodes")
        if not self.x_right > self.x_left:
            raise ConfigError("grid needs x_right > x_left")

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.x_left + self.h * np.arange(1, self.n + 1)


def l2_inner(grid: Grid, f: np.ndarray, g: np.ndarray) -> float:
    """Trapezoid L2 inner product; boundary values are identically zero."""
    return grid.h * float(np.dot(f, g))


def l2_norm(grid: Grid, f: np.ndarray) -> float:
    return float(np.sqrt(grid.h) * np.linalg.norm(f))


@dataclass(frozen=True)
class FiberOperator:
    xi: float
    diag: np.ndarray
    offdiag: np.ndarray
    grid: Grid

    def potential(self) -> np.ndarray:
        """Recover q(x_i, xi) from the stored diagonal."""
        return self.diag - 2.0 / self.grid.h**2

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.offdiag * v[1:]
        out[1:] += self.offdiag * v[:-1]
        return out


@dataclass(frozen=True)
class EigenPair:
    lam: float
    phi: np.ndarray  # L2-normalized grid values
    norm: float


def choose_window(
    field: MagneticField,
    xi: float,
    k: int = 1,
    n: int = DEFAULT_N,
    half_width_factor: float = DEFAULT_HALF_WIDTH_FACTOR,
    margin: float = DIRICHLET_MARGIN,
) -> Grid:
    """Truncation window for the fiber at xi, sized for the lowest k eigenvalues.

    The window is centered at x* = a^{-1}(xi) and widened until the
    potential at both ends clears the k-th Landau scale (2k+1)*b_plus by
    ``margin`` times b_plus, which pushes the Dirichlet truncation error
    below the stencil error.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    center = a_inverse(field, xi)
    sqrt_bm = np.sqrt(field.b_minus)
    half_width = half_width_factor / sqrt_bm
    need = (2 * k + 1 + margin) * field.b_plus
    while True:
        q_left = (xi - eval_a(field, center - half_width)) ** 2
        q_right = (xi - eval_a(field, center + half_width)) ** 2
        if min(q_left, q_right) >= need:
            return Grid(center - half_width, center + half_width, n)
        half_width *= 1.25
        if half_width > MAX_HALF_WIDTH_FACTOR / sqrt_bm:
            raise WindowError(
                f"xi={xi}: no admissible window up to half-width "
                f"{MAX_HALF_WIDTH_FACTOR / sqrt_bm:.3g}"
            )


def tridiagonal_from_potential(q: np.ndarray, grid: Grid, xi: float = 0.0) -> FiberOperator:
    inv_h2 = 1.0 / grid.h**2
    diag = 2.0 * inv_h2 + np.asarray(q, dtype=float)
    offdiag = np.full(grid.n - 1, -inv_h2)
    return FiberOperator(xi=xi, diag=diag, offdiag=offdiag, grid=grid)


def assemble(field: MagneticField, xi: float, grid: Grid) -> FiberOperator:
    """Dirichlet 3-point Laplacian plus the diagonal potential (xi - a(x))^2."""
    q = (xi - eval_a(field, grid.nodes)) ** 2
    return tridiagonal_from_potential(q, grid, xi=xi)


def lowest_eigenpairs(op: FiberOperator, k: int) -> list[EigenPair]:
    """The k smallest eigenpairs, strictly separated, L2-normalized.

    The ground state is sign-fixed to positive grid sum; higher states get
    their largest-magnitude entry positive so results are reproducible.
    """
    n = op.grid.n
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= {n}, got {k}")
    try:
        vals, vecs = eigh_tridiagonal(
            op.diag, op.offdiag, select="i", select_range=(0, k - 1), lapack_driver="stebz"
        )
    except LinAlgError as exc:
        raise EigensolveError(f"xi={op.xi}: inverse iteration failed: {exc}") from exc

    if k > 1:
        gaps = np.diff(vals)
        if np.any(gaps < SEPARATION_MIN):
            j = int(np.argmin(gaps))
            raise EigensolveError(
                f"xi={op.xi}: eigenvalues {j + 1} and {j + 2} separated by only "
                f"{gaps[j]:.3e}; simple spectrum expected, discretization suspect"
            )

    sqrt_h = np.sqrt(op.grid.h)
    pairs = []
    for j in range(k):
        lam = float(vals[j])
        v = vecs[:, j]
        resid = float(np.linalg.norm(op.matvec(v) - lam * v))
        if resid > RESIDUAL_RTOL * max(abs(lam), 1e-30):
            raise EigensolveError(
                f"xi={op.xi}: eigenpair {j + 1} residual {resid:.3e} exceeds "
                f"{RESIDUAL_RTOL:.1e}*|lambda|"
            )
        if j == 0:
            if v.sum() < 0:
                v = -v
        elif v[int(np.argmax(np.abs(v)))] < 0:
            v = -v
        phi = v / sqrt_h
        pairs.append(EigenPair(lam=lam, phi=phi, norm=l2_norm(op.grid, phi)))
    return pairs


def solve_fiber(
    field: MagneticField, xi: float, k: int = 1, n: int = DEFAULT_N, **window_kw
) -> tuple[Grid, list[EigenPair]]:
    """Window, assemble and solve one fiber."""
    grid = choose_window(field, xi, k=k, n=n, **window_kw)
    return grid, lowest_eigenpairs(assemble(field, xi, grid), k)
