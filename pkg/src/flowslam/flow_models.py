"""Analytic background flow fields.

Three building blocks are provided:

* a steady single-gyre field (left half of the double-gyre model, rescaled
  to a square physical domain),
* the classic double-gyre stream-function field,
* an unsteady turbulent component synthesised by kinematic simulation (KS):
  a sum of random incompressible Fourier modes whose amplitudes follow a
  Kolmogorov-like k^(-5/3) energy spectrum.

All velocity evaluations are pure functions of (parameters, position, time)
and accept either a single position of shape (2,) or a batch of shape (n, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GyreParams",
    "KsParams",
    "KsField",
    "FlowFieldSpec",
    "FlowField",
    "DomainError",
    "single_gyre_velocity",
    "double_gyre_velocity",
    "ks_velocity",
    "field_velocity",
    "make_field",
    "ks_energy_spectrum",
    "fit_spectrum_slope",
]

# Queries this far outside the domain are clamped instead of rejected,
# so trajectories that graze a wall do not fail on floating-point noise.
BOUNDARY_SLACK = 1e-9


class DomainError(ValueError):
    """Raised when a field is queried outside its domain of definition."""


@dataclass(frozen=True)
class GyreParams:
    """Parameters of the (double-)gyre stream function.

    amplitude: nondimensional stream-function amplitude A
    epsilon:   gyre oscillation strength (inert for the steady t=0 fields)
    omega:     oscillation angular frequency in rad/s
    length_scale: physical size L of one gyre cell in metres
    """

    amplitude: float = 0.1
    epsilon: float = 0.25
    omega: float = 2.0 * np.pi / 10.0
    length_scale: float = 10.0

    def __post_init__(self):
        if self.amplitude <= 0.0:
            raise ValueError("gyre amplitude must be positive")
        if self.length_scale <= 0.0:
            raise ValueError("gyre length scale must be positive")
        if not 0.0 <= self.epsilon <= 0.5:
            raise ValueError("gyre epsilon must lie in [0, 0.5]")


@dataclass(frozen=True)
class KsParams:
    """Parameters of the kinematic-simulation turbulence component.

    integral_scale:   largest eddy scale L_int in metres
    kolmogorov_scale: smallest eddy scale eta in metres
    n_modes:          number of Fourier modes (0 disables turbulence)
    intensity:        target RMS flow speed in m/s
    unsteadiness_coeff: scale factor on the eddy-turnover frequencies
    rng_seed:         seed for the mode directions and phases
    """

    integral_scale: float = 1.0
    kolmogorov_scale: float = 1e-3
    n_modes: int = 64
    intensity: float = 0.05
    unsteadiness_coeff: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if not self.integral_scale > self.kolmogorov_scale > 0.0:
            raise ValueError("need integral_scale > kolmogorov_scale > 0")
        if self.n_modes == 1 or self.n_modes < 0:
            # a single mode cannot be geometrically spaced; 0 means "off"
            raise ValueError("n_modes must be 0 or >= 2")
        if self.intensity < 0.0:
            raise ValueError("intensity must be nonnegative")

    @property
    def reynolds_number(self) -> float:
        return self.integral_scale / self.kolmogorov_scale


@dataclass(frozen=True)
class FlowFieldSpec:
    """Configuration of a complete background flow field.

    variant is one of "single_gyre", "double_gyre", "turbulent_double_gyre".
    domain is ((xmin, xmax), (ymin, ymax)) in metres.
    """

    variant: str
    gyre: GyreParams = field(default_factory=GyreParams)
    ks: KsParams | None = None
    domain: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if self.variant not in ("single_gyre", "double_gyre", "turbulent_double_gyre"):
            raise ValueError(f"unknown flow variant {self.variant!r}")
        if self.variant == "turbulent_double_gyre" and self.ks is None:
            raise ValueError("turbulent variant requires KS parameters")
        if self.domain is None:
            L = self.gyre.length_scale
            w = L if self.variant == "single_gyre" else 2.0 * L
            object.__setattr__(self, "domain", ((0.0, w), (0.0, L)))
        (x0, x1), (y0, y1) = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("flow domain must have positive extent")

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "gyre": {
                "amplitude": self.gyre.amplitude,
                "epsilon": self.gyre.epsilon,
                "omega": self.gyre.omega,
                "length_scale": self.gyre.length_scale,
            },
            "domain": [list(self.domain[0]), list(self.domain[1])],
        }
        if self.ks is not None:
            d["ks"] = {
                "integral_scale": self.ks.integral_scale,
                "kolmogorov_scale": self.ks.kolmogorov_scale,
                "n_modes": self.ks.n_modes,
                "intensity": self.ks.intensity,
                "unsteadiness_coeff": self.ks.unsteadiness_coeff,
                "rng_seed": self.ks.rng_seed,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FlowFieldSpec":
        ks = KsParams(**d["ks"]) if d.get("ks") else None
        dom = d.get("domain")
        return cls(
            variant=d["variant"],
            gyre=GyreParams(**d["gyre"]),
            ks=ks,
            domain=(tuple(dom[0]), tuple(dom[1])) if dom else None,
        )


def _as_points(p) -> tuple[np.ndarray, bool]:
    """Normalise a position argument to shape (n, 2)."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("positions must have shape (2,) or (n, 2)")
    return arr, False


def _check_domain(pts: np.ndarray, xlim, ylim) -> np.ndarray:
    (x0, x1), (y0, y1) = xlim, ylim
    x, y = pts[:, 0], pts[:, 1]
    bad = (
        (x < x0 - BOUNDARY_SLACK)
        | (x > x1 + BOUNDARY_SLACK)
        | (y < y0 - BOUNDARY_SLACK)
        | (y > y1 + BOUNDARY_SLACK)
    )
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DomainError(
            f"position ({pts[i, 0]:g}, {pts[i, 1]:g}) outside flow domain "
            f"[{x0:g}, {x1:g}] x [{y0:g}, {y1:g}]"
        )
    out = pts.copy()
    out[:, 0] = np.clip(x, x0, x1)
    out[:, 1] = np.clip(y, y0, y1)
    return out


def _gyre_uv(xn: np.ndarray, yn: np.ndarray, t: float, params: GyreParams):
    """Velocity of the double-gyre stream function at nondimensional coords.

    psi = A sin(pi g(x, t)) sin(pi y) with g = a(t) x^2 + b(t) x,
    a = eps sin(w t), b = 1 - 2 eps sin(w t); u = -dpsi/dy, v = dpsi/dx.
    """
    A = params.amplitude
    s = params.epsilon * np.sin(params.omega * t)
    a, b = s, 1.0 - 2.0 * s
    g = a * xn**2 + b * xn
    dg = 2.0 * a * xn + b
    u = -np.pi * A * np.sin(np.pi * g) * np.cos(np.pi * yn)
    v = np.pi * A * np.cos(np.pi * g) * np.sin(np.pi * yn) * dg
    return u, v


def single_gyre_velocity(p, params: GyreParams) -> np.ndarray:
    """Steady single-gyre velocity on [0, L] x [0, L].

    The field is the left half of the double-gyre model at t = 0, evaluated
    at the rescaled coordinates (x/L, y/L).
    """
    pts, single = _as_points(p)
    L = params.length_scale
    pts = _check_domain(pts, (0.0, L), (0.0, L))
    u, v = _gyre_uv(pts[:, 0] / L, pts[:, 1] / L, 0.0, params)
    out = np.stack([u, v], axis=-1)
    return out[0] if single else out


def double_gyre_velocity(p, t: float, params: GyreParams) -> np.ndarray:
    """Double-gyre velocity on [0, 2L] x [0, L] at time t."""
    pts, single = _as_points(p)
    L = params.length_scale
    pts = _check_domain(pts, (0.0, 2.0 * L), (0.0, L))
    u, v = _gyre_uv(pts[:, 0] / L, pts[:, 1] / L, t, params)
    out = np.stack([u, v], axis=-1)
    return out[0] if single else out


class KsField:
    """A realisation of the kinematic-simulation turbulence field.

    The field is a finite sum of incompressible Fourier modes

        u(x, t) = sum_n q_n cos(k_n . x + w_n t - phi_n) e_n

    where e_n is the unit vector perpendicular to the wavevector k_n.
    Wavenumber magnitudes are geometrically spaced between 2*pi/L_int and
    2*pi/eta; each squared amplitude carries the spectral energy
    E(k_n) dk_n of its wavenumber band with E(k) ~ k^(-5/3), scaled so the
    spatial RMS speed equals ``params.intensity``.  Mode directions and
    phases are drawn once from ``params.rng_seed``.
    """

    def __init__(self, params: KsParams):
        self.params = params
        n = params.n_modes
        if n == 0 or params.intensity == 0.0:
            self.wavenumbers = np.zeros(0)
            self.wavevectors = np.zeros((0, 2))
            self.transverse = np.zeros((0, 2))
            self.amplitudes = np.zeros(0)
            self.frequencies = np.zeros(0)
            self.phases = np.zeros(0)
            return
        k_lo = 2.0 * np.pi / params.integral_scale
        k_hi = 2.0 * np.pi / params.kolmogorov_scale
        k = np.geomspace(k_lo, k_hi, n)
        # trapezoidal wavenumber bands around each mode
        dk = np.empty(n)
        dk[1:-1] = 0.5 * (k[2:] - k[:-2])
        dk[0] = k[1] - k[0]
        dk[-1] = k[-1] - k[-2]
        energy = k ** (-5.0 / 3.0) * dk
        energy *= params.intensity**2 / energy.sum()

        rng = np.random.default_rng(params.rng_seed)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
        direction = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        self.wavenumbers = k
        self.wavevectors = k[:, None] * direction
        self.transverse = np.stack([-direction[:, 1], direction[:, 0]], axis=-1)
        # <cos^2> = 1/2 over space, so q_n = sqrt(2 E dk) gives sum q^2/2 = u_rms^2
        self.amplitudes = np.sqrt(2.0 * energy)
        self.frequencies = params.unsteadiness_coeff * np.sqrt(
            k**3 * (energy / dk)
        )

    def velocity(self, p, t=0.0) -> np.ndarray:
        pts, single = _as_points(p)
        out = np.zeros_like(pts)
        tarr = np.asarray(t, dtype=float)
        for kvec, q, w, phi, e in zip(
            self.wavevectors, self.amplitudes, self.frequencies, self.phases,
            self.transverse,
        ):
            phase = pts @ kvec + w * tarr - phi
            out += (q * np.cos(phase))[..., None] * e
        return out[0] if single else out


def ks_velocity(p, t: float, params: KsParams) -> np.ndarray:
    """Evaluate a KS turbulence realisation (rebuilds the mode table).

    Prefer constructing a :class:`KsField` once when evaluating many points.
    """
    return KsField(params).velocity(p, t)


class FlowField:
    """A ready-to-evaluate flow field built from a :class:`FlowFieldSpec`."""

    def __init__(self, spec: FlowFieldSpec):
        self.spec = spec
        self._ks = KsField(spec.ks) if spec.ks is not None else None

    def velocity(self, p, t: float = 0.0) -> np.ndarray:
        spec = self.spec
        if spec.variant == "single_gyre":
            return single_gyre_velocity(p, spec.gyre)
        if spec.variant == "double_gyre":
            return double_gyre_velocity(p, 0.0, spec.gyre)
        # steady double-gyre backbone frozen at t=0 plus unsteady turbulence
        steady = double_gyre_velocity(p, 0.0, spec.gyre)
        return steady + self._ks.velocity(p, t)

    def steady_velocity(self, p) -> np.ndarray:
        """Only the steady (gyre) component, used for sign-structure checks."""
        spec = self.spec
        if spec.variant == "single_gyre":
            return single_gyre_velocity(p, spec.gyre)
        return double_gyre_velocity(p, 0.0, spec.gyre)


def make_field(spec: FlowFieldSpec) -> FlowField:
    return FlowField(spec)


def field_velocity(spec: FlowFieldSpec, p, t: float = 0.0) -> np.ndarray:
    """One-shot evaluation of the configured field at (p, t)."""
    return FlowField(spec).velocity(p, t)


def ks_energy_spectrum(
    params: KsParams,
    n_grid: int = 512,
    extent: float | None = None,
    n_bins_per_decade: int = 8,
):
    """Estimate the energy spectrum of a sampled KS field.

    The field is sampled on an ``n_grid`` x ``n_grid`` patch, Hann-windowed,
    Fourier transformed, and the power is binned into log-spaced radial
    wavenumber bins.  Returns (k_centres, spectral_density) with arbitrary
    but k-consistent normalisation, suitable for slope fitting.
    """
    if params.n_modes == 0 or params.intensity == 0.0:
        raise ValueError("KS spectrum undefined for a zero-intensity field")
    if extent is None:
        # Nyquist above the dissipation scale, patch comparable to L_int
        extent = min(params.integral_scale, n_grid * params.kolmogorov_scale / 1.6)
    dx = extent / n_grid
    xs = np.arange(n_grid) * dx
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    fld = KsField(params)
    vel = fld.velocity(pts, 0.0).reshape(n_grid, n_grid, 2)

    win = np.hanning(n_grid)
    w2d = np.outer(win, win)
    fu = np.fft.fft2(vel[:, :, 0] * w2d)
    fv = np.fft.fft2(vel[:, :, 1] * w2d)
    power = (np.abs(fu) ** 2 + np.abs(fv) ** 2) / n_grid**4

    kfreq = 2.0 * np.pi * np.fft.fftfreq(n_grid, d=dx)
    KX, KY = np.meshgrid(kfreq, kfreq, indexing="ij")
    kmag = np.hypot(KX, KY).ravel()
    power = power.ravel()

    k_min = 2.0 * np.pi / extent
    k_max = np.pi / dx
    n_bins = max(4, int(np.log10(k_max / k_min) * n_bins_per_decade))
    edges = np.geomspace(k_min, k_max, n_bins + 1)
    which = np.digitize(kmag, edges) - 1
    valid = (which >= 0) & (which < n_bins)
    sums = np.bincount(which[valid], weights=power[valid], minlength=n_bins)
    centres = np.sqrt(edges[:-1] * edges[1:])
    width = np.diff(edges)
    density = sums / width
    keep = sums > 0
    return centres[keep], density[keep]


def fit_spectrum_slope(k: np.ndarray, density: np.ndarray, k_lo: float, k_hi: float) -> float:
    """Least-squares slope of log(density) vs log(k) over [k_lo, k_hi]."""
    sel = (k >= k_lo) & (k <= k_hi) & (density > 0)
    if sel.sum() < 3:
        raise ValueError("not enough spectral bins in the fit range")
    slope, _ = np.polyfit(np.log(k[sel]), np.log(density[sel]), 1)
    return float(slope)
