"""Admissible unidirectional magnetic fields and their vector potentials.

A field profile b(x) is bounded, non-decreasing, and approaches limits
b_minus / b_plus at -/+ infinity with 0 < b_minus <= b_plus.  The vector
potential is the primitive a(x) = int_0^x b(s) ds, normalized so a(0) = 0.
Fields with b_plus < 3*b_minus are "gap admissible": their first spectral
band [b_minus, b_plus] stays isolated from the rest of the spectrum, which
is what every perturbation and inversion experiment relies on.  Larger
jumps are representable only behind an explicit override flag.

All built-in families have closed-form primitives so that quadrature and
eigensolver layers can be checked against exact values.  Compactly
supported potential perturbations w = a_tilde - a live in a hat-function
basis, which makes the support and endpoint-zero constraints exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad

from .errors import AdmissibilityError, ConfigError

FIELD_KINDS = ("constant", "tanh", "smoothed_step", "piecewise_linear", "perturbed")

# |u| beyond which tanh(u) evaluates to exactly +-1.0 in float64
_TANH_SAT = 19.5


@dataclass(frozen=True)
class PerturbationW:
    """Compactly supported potential perturbation w = a_tilde - a.

    The coefficients are nodal values on a uniform hat-function basis over
    [-r, r]; w vanishes identically outside the support and at the two
    endpoints.  ``admissible=True`` requests that the induced field
    b + w' stay non-decreasing (checked on a fine grid when the
    perturbation is attached to a field).
    """

    support_radius: float
    coefficients: tuple[float, ...]
    admissible: bool = False

    def __post_init__(self):
        if not (self.support_radius > 0):
            raise ConfigError("perturbation support radius must be positive")
        if len(self.coefficients) < 1:
            raise ConfigError("perturbation needs at least one hat coefficient")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def basis_size(self) -> int:
        return len(self.coefficients)

    @property
    def knots(self) -> np.ndarray:
        """Hat knots, endpoints included."""
        return np.linspace(-self.support_radius, self.support_radius, self.basis_size + 2)

    @property
    def nodal_values(self) -> np.ndarray:
        return np.concatenate(([0.0], self.coefficients, [0.0]))

    @property
    def sup_norm(self) -> float:
        """Exact sup norm of the piecewise-linear w."""
        return float(np.max(np.abs(self.nodal_values)))

    def w(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.knots, self.nodal_values)

    def w_prime(self, x):
        """Right-continuous derivative of w (piecewise constant)."""
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        knots = self.knots
        slopes = np.diff(self.nodal_values) / np.diff(knots)
        idx = np.searchsorted(knots, arr, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        out = np.zeros_like(arr)
        out[inside] = slopes[idx[inside]]
        return out.reshape(np.shape(x))

    def scaled(self, factor: float) -> "PerturbationW":
        return replace(self, coefficients=tuple(factor * c for c in self.coefficients))

    def to_config(self) -> dict:
        return {
            "support_radius": self.support_radius,
            "coefficients": list(self.coefficients),
            "admissible": self.admissible,
        }


def hat_basis_functions(support_radius: float, basis_size: int):
    """Return the individual hat functions psi_k as PerturbationW objects."""
    out = []
    for k in range(basis_size):
        coeffs = [0.0] * basis_size
        coeffs[k] = 1.0
        out.append(PerturbationW(support_radius, tuple(coeffs)))
    return out


@dataclass(frozen=True)
class MagneticField:
    """One of the built-in field families, optionally with a perturbation."""

    kind: str
    b_minus: float
    b_plus: float
    params: dict
    perturbation: PerturbationW | None = None
    base: "MagneticField | None" = None
    allow_band_overlap: bool = False

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigError(f"unknown field kind {self.kind!r}")
        if not (0 < self.b_minus <= self.b_plus):
            raise AdmissibilityError(
                f"need 0 < b_minus <= b_plus, got ({self.b_minus}, {self.b_plus})"
            )
        if self.b_plus >= 3 * self.b_minus and not self.allow_band_overlap:
            raise AdmissibilityError(
                f"b_plus={self.b_plus} >= 3*b_minus={3 * self.b_minus}: first band "
                "overlaps the rest of the spectrum (pass allow_band_overlap to force)"
            )
        _VALIDATORS[self.kind](self)

    @property
    def gap_admissible(self) -> bool:
        return self.b_plus < 3 * self.b_minus

    @property
    def profile_cutoff(self) -> float:
        """|x| beyond which b(x) equals b_minus or b_plus exactly."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "tanh":
            return _TANH_SAT * self.params["width"]
        if self.kind == "smoothed_step":
            return self.params["cutoff"]
        if self.kind == "piecewise_linear":
            xs = self.params["knots_x"]
            return max(abs(xs[0]), abs(xs[-1]))
        return max(self.base.profile_cutoff, self.perturbation.support_radius)

    def b(self, x):
        return eval_b(self, x)

    def a(self, x):
        return eval_a(self, x)

    def to_config(self) -> dict:
        cfg = {
            "kind": self.kind,
            "b_minus": self.b_minus,
            "b_plus": self.b_plus,
            "params": dict(self.params),
        }
        if self.allow_band_overlap:
            cfg["allow_band_overlap"] = True
        if self.kind == "perturbed":
            cfg["base"] = self.base.to_config()
            cfg["perturbation"] = self.perturbation.to_config()
            del cfg["params"]
        return cfg


def _validate_constant(f: MagneticField):
    if f.b_minus != f.b_plus:
        raise ConfigError("constant field needs b_minus == b_plus")


def _validate_tanh(f: MagneticField):
    w = f.params.get("width")
    if w is None or not (w > 0):
        raise ConfigError("tanh field needs params={'width': positive}")
    if f.b_minus >= f.b_plus:
        raise ConfigError("tanh field needs b_minus < b_plus")


def _validate_smoothed_step(f: MagneticField):
    c = f.params.get("cutoff")
    if c is None or not (c > 0):
        raise ConfigError("smoothed_step field needs params={'cutoff': positive}")
    if f.b_minus >= f.b_plus:
        raise ConfigError("smoothed_step field needs b_minus < b_plus")


def _validate_piecewise_linear(f: MagneticField):
    xs = np.asarray(f.params.get("knots_x", ()), dtype=float)
    bs = np.asarray(f.params.get("knots_b", ()), dtype=float)
    if xs.size < 2 or xs.size != bs.size:
        raise ConfigError("piecewise_linear needs matching knots_x / knots_b, >= 2 knots")
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("knots_x must be strictly increasing")
    if np.any(np.diff(bs) < 0):
        raise AdmissibilityError("knots_b must be non-decreasing")
    if bs[0] < f.b_minus or bs[-1] > f.b_plus:
        raise AdmissibilityError("knot field values must stay inside [b_minus, b_plus]")


def _validate_perturbed(f: MagneticField):
    if f.base is None or f.perturbation is None:
        raise ConfigError("perturbed field needs base and perturbation")
    if f.base.kind == "perturbed":
        raise ConfigError("perturbations do not nest; merge coefficients instead")


_VALIDATORS = {
    "constant": _validate_constant,
    "tanh": _validate_tanh,
    "smoothed_step": _validate_smoothed_step,
    "piecewise_linear": _validate_piecewise_linear,
    "perturbed": _validate_perturbed,
}


# ---------------------------------------------------------------------------
# constructors

def constant_field(b: float) -> MagneticField:
    return MagneticField("constant", b, b, {})


def tanh_field(b_minus: float, b_plus: float, width: float = 1.0) -> MagneticField:
    return MagneticField("tanh", b_minus, b_plus, {"width": float(width)})


def smoothed_step_field(b_minus: float, b_plus: float, cutoff: float = 3.0) -> MagneticField:
    return MagneticField("smoothed_step", b_minus, b_plus, {"cutoff": float(cutoff)})


def piecewise_linear_field(b_minus, b_plus, knots_x, knots_b, allow_band_overlap=False):
    return MagneticField(
        "piecewise_linear",
        b_minus,
        b_plus,
        {"knots_x": [float(v) for v in knots_x], "knots_b": [float(v) for v in knots_b]},
        allow_band_overlap=allow_band_overlap,
    )


def field_from_config(cfg: dict) -> MagneticField:
    """Build a field from its serialized key-value form; unknown keys rejected."""
    allowed = {"kind", "b_minus", "b_plus", "params", "perturbation", "base", "allow_band_overlap"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown field config keys: {sorted(unknown)}")
    kind = cfg.get("kind")
    if kind == "perturbed":
        base = field_from_config(cfg["base"])
        pcfg = dict(cfg["perturbation"])
        punknown = set(pcfg) - {"support_radius", "coefficients", "admissible"}
        if punknown:
            raise ConfigError(f"unknown perturbation keys: {sorted(punknown)}")
        w = PerturbationW(
            float(pcfg["support_radius"]),
            tuple(pcfg["coefficients"]),
            bool(pcfg.get("admissible", False)),
        )
        return perturb(base, w)
    return MagneticField(
        kind=kind,
        b_minus=float(cfg["b_minus"]),
        b_plus=float(cfg["b_plus"]),
        params=dict(cfg.get("params", {})),
        allow_band_overlap=bool(cfg.get("allow_band_overlap", False)),
    )


# ---------------------------------------------------------------------------
# evaluation

def _logcosh(u):
    au = np.abs(u)
    return au + np.log1p(np.exp(-2.0 * au)) - math.log(2.0)


def eval_b(field: MagneticField, x):
    """Field strength b(x); exactly b_minus / b_plus past the profile cutoff."""
    x_arr = np.asarray(x, dtype=float)
    out = _eval_b_array(field, x_arr)
    return float(out) if np.isscalar(x) or x_arr.ndim == 0 else out


def _eval_b_array(field, x):
    bm, bp = field.b_minus, field.b_plus
    if field.kind == "constant":
        return np.full_like(x, bm)
    if field.kind == "tanh":
        s = field.params["width"]
        mid, half = 0.5 * (bp + bm), 0.5 * (bp - bm)
        cut = _TANH_SAT * s
        core = mid + half * np.tanh(np.clip(x, -cut, cut) / s)
        return np.where(x >= cut, bp, np.where(x <= -cut, bm, core))
    if field.kind == "smoothed_step":
        x0 = field.params["cutoff"]
        u = np.clip((x + x0) / (2.0 * x0), 0.0, 1.0)
        core = bm + (bp - bm) * (3.0 * u * u - 2.0 * u**3)
        return np.where(x >= x0, bp, np.where(x <= -x0, bm, core))
    if field.kind == "piecewise_linear":
        xs = np.asarray(field.params["knots_x"], float)
        bs = np.asarray(field.params["knots_b"], float)
        core = np.interp(x, xs, bs)
        return np.where(x < xs[0], bm, np.where(x > xs[-1], bp, core))
    return _eval_b_array(field.base, x) + field.perturbation.w_prime(x)


def eval_a(field: MagneticField, x):
    """Vector potential a(x) = int_0^x b, closed form for every built-in family."""
    x_arr = np.asarray(x, dtype=float)
    out = _eval_a_array(field, x_arr)
    return float(out) if np.isscalar(x) or x_arr.ndim == 0 else out


def _eval_a_array(field, x):
    bm, bp = field.b_minus, field.b_plus
    if field.kind == "constant":
        return bm * x
    if field.kind == "tanh":
        s = field.params["width"]
        mid, half = 0.5 * (bp + bm), 0.5 * (bp - bm)
        return mid * x + half * s * _logcosh(x / s)
    if field.kind == "smoothed_step":
        x0 = field.params["cutoff"]
        delta = bp - bm

        def F(y):
            # antiderivative with F(-x0) = 0; cubic transition integrates exactly
            u = np.clip((y + x0) / (2.0 * x0), 0.0, 1.0)
            trans = bm * (np.clip(y, -x0, x0) + x0) + delta * 2.0 * x0 * (u**3 - 0.5 * u**4)
            f_top = (bm + 0.5 * delta) * 2.0 * x0 + bp * (y - x0)
            return np.where(y <= -x0, bm * (y + x0), np.where(y >= x0, f_top, trans))

        return F(x) - F(np.asarray(0.0))
    if field.kind == "piecewise_linear":
        return _piecewise_linear_a(field, x)
    return _eval_a_array(field.base, x) + field.perturbation.w(x)


def _piecewise_linear_a(field, x):
    xs = np.asarray(field.params["knots_x"], float)
    bs = np.asarray(field.params["knots_b"], float)
    bm, bp = field.b_minus, field.b_plus
    seg = 0.5 * (bs[:-1] + bs[1:]) * np.diff(xs)
    A = np.concatenate(([0.0], np.cumsum(seg)))  # antiderivative at knots, F(xs[0]) = 0

    def F(y):
        y = np.atleast_1d(np.asarray(y, float))
        out = np.empty_like(y)
        below = y <= xs[0]
        above = y >= xs[-1]
        mid = ~below & ~above
        out[below] = bm * (y[below] - xs[0])
        out[above] = A[-1] + bp * (y[above] - xs[-1])
        if np.any(mid):
            k = np.searchsorted(xs, y[mid], side="right") - 1
            t = y[mid] - xs[k]
            slope = (bs[k + 1] - bs[k]) / (xs[k + 1] - xs[k])
            out[mid] = A[k] + bs[k] * t + 0.5 * slope * t * t
        return out

    return (F(x) - F(0.0)).reshape(np.shape(x))


def primitive_by_quadrature(field: MagneticField, x: float, tol: float = 1e-12) -> float:
    """Adaptive-quadrature primitive, the oracle for the closed forms."""
    val, _err = quad(lambda s: eval_b(field, s), 0.0, float(x),
                     epsabs=tol, epsrel=1e-13, limit=400)
    return val


def a_inverse(field: MagneticField, xi: float, tol: float = 1e-12) -> float:
    """Unique root of a(x) = xi, by bisection on the strictly increasing a."""
    xi = float(xi)
    if xi == 0.0:
        return 0.0
    bm, bp = field.b_minus, field.b_plus
    pad = field.perturbation.sup_norm / bm + 1.0 if field.kind == "perturbed" else 1.0
    if xi > 0:
        lo, hi = xi / bp - pad, xi / bm + pad
    else:
        lo, hi = xi / bm - pad, xi / bp + pad
    flo = eval_a(field, lo) - xi
    fhi = eval_a(field, hi) - xi
    if flo > 0 or fhi < 0:
        raise AdmissibilityError("potential is not bracketing its own bounds; field corrupt")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if eval_a(field, mid) - xi <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# gap bound and perturbation attachment

def r0_bound(b_minus: float, b_plus: float) -> float:
    """Support-radius threshold sqrt(3*b_minus - b_plus) / (2*b_plus)."""
    if not (0 < b_minus <= b_plus < 3 * b_minus):
        raise AdmissibilityError(
            f"gap-inadmissible pair ({b_minus}, {b_plus}): need 0 < b_minus <= b_plus < 3*b_minus"
        )
    return math.sqrt(3.0 * b_minus - b_plus) / (2.0 * b_plus)


def perturb(field: MagneticField, w: PerturbationW) -> MagneticField:
    """Attach a compact potential perturbation: a_tilde = a + w, b_tilde = b + w'."""
    if field.kind == "perturbed":
        raise ConfigError("perturbations do not nest; merge coefficients instead")
    if field.gap_admissible:
        r0 = r0_bound(field.b_minus, field.b_plus)
        if w.support_radius >= r0:
            warnings.warn(
                f"perturbation support radius {w.support_radius} is not below the "
                f"uniqueness threshold r0={r0:.6g}; single-current identification "
                "experiments are outside their guaranteed regime",
                stacklevel=2,
            )
    out = MagneticField(
        kind="perturbed",
        b_minus=field.b_minus,
        b_plus=field.b_plus,
        params={},
        perturbation=w,
        base=field,
        allow_band_overlap=field.allow_band_overlap,
    )
    if w.admissible:
        _check_monotone(out)
    return out


def _check_monotone(field: MagneticField):
    """Reject perturbations whose induced field decreases on a fine check grid."""
    r = field.perturbation.support_radius
    step = 1e-3 * r
    grid = np.arange(-r - 10 * step, r + 11 * step, step)
    vals = eval_b(field, grid)
    drop = np.diff(vals)
    if np.any(drop < -1e-12 * max(1.0, field.b_plus)):
        i = int(np.argmin(drop))
        raise AdmissibilityError(
            f"perturbed field decreases near x={grid[i]:.6g} "
            f"(drop {drop[i]:.3e}); not in the admissible class"
        )
