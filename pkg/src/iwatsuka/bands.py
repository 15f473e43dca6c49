"""Band functions lambda_j(xi) and first-band velocity moments over a xi sweep.

Each fiber gets its own truncation window, so the stored ground states
carry their grids with them.  The velocity moment <v phi_1, phi_1> is
computed by quadrature of the explicit integrand, independently of the
finite-difference derivative of the band, which turns the eigenvalue
derivative identity into a cross-check instead of a definition.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .fields import MagneticField, eval_a
from .spectral import DEFAULT_N, EigenPair, Grid, assemble, choose_window, lowest_eigenpairs

DEFAULT_XI_FACTOR = 8.0
DEFAULT_XI_COUNT = 161
DEFAULT_J_MAX = 12


@dataclass(frozen=True)
class XiGrid:
    xi_min: float
    xi_max: float
    m: int

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("xi grid needs at least 2 nodes")
        if not self.xi_max > self.xi_min:
            raise ConfigError("xi grid needs xi_max > xi_min")

    @property
    def spacing(self) -> float:
        return (self.xi_max - self.xi_min) / (self.m - 1)

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.xi_min, self.xi_max, self.m)


def default_xi_grid(field: MagneticField, m: int = DEFAULT_XI_COUNT,
                    factor: float = DEFAULT_XI_FACTOR) -> XiGrid:
    half = factor * np.sqrt(field.b_plus)
    return XiGrid(-half, half, m)


@dataclass
class BandTable:
    """lambda_j(xi) for j <= j_max plus the stored ground-state fibers.

    Read-only after construction; ``windows[i]`` and ``phi1[i]`` hold the
    per-fiber grid and L2-normalized ground state at ``xi_grid.values[i]``.
    """

    field: MagneticField
    xi_grid: XiGrid
    j_max: int
    lambdas: np.ndarray  # shape (m, j_max)
    vmoment: np.ndarray  # shape (m,)
    windows: list[Grid]
    phi1: list[np.ndarray]

    @property
    def lambda1(self) -> np.ndarray:
        return self.lambdas[:, 0]


def _fiber_job(field, xi, j_max, n):
    grid = choose_window(field, xi, k=j_max, n=n)
    pairs = lowest_eigenpairs(assemble(field, xi, grid), j_max)
    lams = np.array([p.lam for p in pairs])
    vm = _velocity_moment(field, xi, grid, pairs[0])
    return lams, vm, grid, pairs[0].phi


def _velocity_moment(field, xi, grid: Grid, ground: EigenPair) -> float:
    v = 2.0 * (xi - eval_a(field, grid.nodes))
    return grid.h * float(np.dot(v * ground.phi, ground.phi))


def compute_bands(
    field: MagneticField,
    xi_grid: XiGrid | None = None,
    j_max: int = DEFAULT_J_MAX,
    n: int = DEFAULT_N,
    workers: int = 1,
) -> BandTable:
    """Sweep the xi grid, one eigensolve per fiber; parallel over fibers."""
    if xi_grid is None:
        xi_grid = default_xi_grid(field)
    if j_max < 1:
        raise ConfigError("j_max must be >= 1")
    xis = xi_grid.values

    def job(xi):
        try:
            return _fiber_job(field, xi, j_max, n)
        except NumericalError as exc:
            raise type(exc)(f"fiber xi={xi}: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, xis))
    else:
        results = [job(xi) for xi in xis]

    lambdas = np.vstack([r[0] for r in results])
    vmoment = np.array([r[1] for r in results])
    windows = [r[2] for r in results]
    phi1 = [r[3] for r in results]
    return BandTable(field, xi_grid, j_max, lambdas, vmoment, windows, phi1)


def velocity_moment(table: BandTable, xi_index: int) -> float:
    """Quadrature of 2*(xi - a)*phi_1^2 over the fiber window at one node."""
    xi = table.xi_grid.values[xi_index]
    grid = table.windows[xi_index]
    phi = table.phi1[xi_index]
    v = 2.0 * (xi - eval_a(table.field, grid.nodes))
    return grid.h * float(np.dot(v * phi, phi))


def band_derivative_fd(table: BandTable, j: int) -> np.ndarray:
    """Central differences of lambda_j over the xi grid, one-sided at the ends."""
    if table.xi_grid.m < 5:
        raise ConfigError("finite differences need at least 5 xi nodes")
    if not 1 <= j <= table.j_max:
        raise ConfigError(f"band index {j} outside 1..{table.j_max}")
    lam = table.lambdas[:, j - 1]
    d = table.xi_grid.spacing
    out = np.empty_like(lam)
    out[1:-1] = (lam[2:] - lam[:-2]) / (2.0 * d)
    out[0] = (lam[1] - lam[0]) / d
    out[-1] = (lam[-1] - lam[-2]) / d
    return out


def resample_to(grid_from: Grid, phi: np.ndarray, grid_to: Grid) -> np.ndarray:
    """Linear interpolation onto another window, zero-extended outside."""
    return np.interp(grid_to.nodes, grid_from.nodes, phi, left=0.0, right=0.0)
