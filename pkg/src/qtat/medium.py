"""Structured grid, coefficient storage, derived scalar fields and phantoms.

The computational domain is a box [origin, origin + dims*h) sampled on a
node-collocated uniform Cartesian grid.  A medium is the coefficient pair
(n, sigma) together with the angular frequency omega; everything downstream
works with q = omega^2 n + i omega sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, GridMismatch, ParamError

# Admissibility floor for n(x); the theory only needs some C > 0.
N_FLOOR_DEFAULT = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform node-collocated grid over a 3D box.

    Parameters
    ----------
    dims
        Number of nodes per axis, each >= 4.
    spacing
        Uniform node spacing h > 0.
    origin
        Coordinates of node (0, 0, 0).
    """

    dims: tuple[int, int, int]
    spacing: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", float(self.spacing))
        if len(dims) != 3 or any(d < 4 for d in dims):
            raise ParamError(f"grid dims must be 3 integers >= 4, got {dims}")
        if self.spacing <= 0:
            raise ParamError("grid spacing must be positive")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def lengths(self) -> tuple[float, float, float]:
        """Box side lengths dims*h (half-open box convention)."""
        return tuple(d * self.spacing for d in self.dims)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.dims[axis])

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(*(self.axis_coords(a) for a in range(3)), indexing="ij")

    def center(self) -> np.ndarray:
        return np.array(
            [self.origin[a] + 0.5 * (self.dims[a] - 1) * self.spacing for a in range(3)]
        )

    def interior_mask(self, depth: int = 1) -> np.ndarray:
        """Boolean mask of nodes at least `depth` layers from every face."""
        m = np.zeros(self.dims, dtype=bool)
        sl = tuple(slice(depth, n - depth) for n in self.dims)
        m[sl] = True
        return m

    def boundary_mask(self) -> np.ndarray:
        return ~self.interior_mask(1)

    def same_as(self, other: "Grid") -> bool:
        return (
            self.dims == other.dims
            and np.isclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )

    def check_same(self, other: "Grid") -> None:
        if not self.same_as(other):
            raise GridMismatch(f"grid {self} incompatible with {other}")


def _as_field(grid: Grid, values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(grid.dims, float(arr))
    if arr.shape != grid.dims:
        raise GridMismatch(f"{name} has shape {arr.shape}, expected {grid.dims}")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Medium:
    """Coefficient pair (n, sigma) on a grid plus the angular frequency.

    n is the squared refractive index (must stay >= n_floor > 0), sigma the
    conductivity (must stay >= 0).  Immutable after construction; safe to
    share across workers.
    """

    grid: Grid
    n: np.ndarray
    sigma: np.ndarray
    omega: float
    n_floor: float = N_FLOOR_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "n", _as_field(self.grid, self.n, "n"))
        object.__setattr__(self, "sigma", _as_field(self.grid, self.sigma, "sigma"))
        object.__setattr__(self, "omega", float(self.omega))
        if self.omega <= 0:
            raise AdmissibilityError("omega must be positive")
        check_admissible(self)


def check_admissible(medium: Medium) -> None:
    """Raise AdmissibilityError unless n >= n_floor > 0 and sigma >= 0 everywhere."""
    nmin = float(medium.n.min())
    smin = float(medium.sigma.min())
    if nmin < medium.n_floor:
        raise AdmissibilityError(
            f"n must satisfy n >= {medium.n_floor} everywhere; min(n) = {nmin}"
        )
    if smin < 0:
        raise AdmissibilityError(f"sigma must be nonnegative; min(sigma) = {smin}")


def eval_q(medium: Medium) -> np.ndarray:
    """Pointwise q = omega^2 n + i omega sigma; nonvanishing on admissible media."""
    check_admissible(medium)
    w = medium.omega
    return w * w * medium.n + 1j * w * medium.sigma


@dataclass(frozen=True)
class DerivedFields:
    """Derived scalar fields of a medium.

    kappa  = omega^2 sigma^2 / |q|^2        (ellipticity symbol coefficient)
    tau_n  = omega^4 sigma n / |q|^2        (delta-n symbol coefficient)
    tau_h  = 2 kappa                        (single-illumination hyperbolicity
                                             indicator; elliptic iff tau_h < 1)
    """

    q: np.ndarray
    kappa: np.ndarray
    tau_n: np.ndarray
    tau_h: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "tau_h", 2.0 * self.kappa)


def derived_fields(medium: Medium) -> DerivedFields:
    """Compute q, kappa, tau_n (and tau_h = 2 kappa) pointwise."""
    q = eval_q(medium)
    w = medium.omega
    q_abs2 = np.abs(q) ** 2  # = omega^2 sigma^2 + omega^4 n^2
    kappa = (w * medium.sigma) ** 2 / q_abs2
    tau_n = w**4 * medium.sigma * medium.n / q_abs2
    return DerivedFields(q=q, kappa=kappa, tau_n=tau_n)


# --- synthetic phantoms ----------------------------------------------------

PHANTOM_KINDS = ("constant", "smooth_bump", "two_inclusions")
COLLAR_CELLS = 2  # perturbations vanish on this many cells next to each face


def _bump_profile(grid: Grid, center, radius: float,
                  profile: str = "c2") -> np.ndarray:
    """Compactly supported bump on the ball of radius R.

    "c2" is the polynomial (1 - r^2/R^2)^3 (C^2 across the support edge);
    "c4"/"c6" raise the power to 5/7 for two/four more continuous
    derivatives; "mollifier" is exp(1 - 1/(1 - r^2/R^2)), smooth to all
    orders but with derivatives so concentrated near the support edge that
    moderate grids resolve it worse than the polynomial profiles.
    """
    xx, yy, zz = grid.meshgrid()
    r2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2
    t = np.clip(1.0 - r2 / radius**2, 0.0, None)
    if profile == "c2":
        return t**3
    if profile == "c4":
        return t**5
    if profile == "c6":
        return t**7
    if profile == "mollifier":
        out = np.zeros_like(t)
        inside = t > 1e-14
        out[inside] = np.exp(1.0 - 1.0 / t[inside])
        return out
    raise ParamError(f"unknown bump profile {profile!r}")


def _check_bump_inside(grid: Grid, center, radius: float) -> None:
    lo = np.array(grid.origin) + COLLAR_CELLS * grid.spacing
    hi = np.array(grid.origin) + (np.array(grid.dims) - 1 - COLLAR_CELLS) * grid.spacing
    center = np.asarray(center, dtype=float)
    if np.any(center - radius < lo) or np.any(center + radius > hi):
        raise ParamError(
            "bump support must stay clear of the 2-cell boundary collar; "
            f"center={center.tolist()} radius={radius} box=[{lo.tolist()}, {hi.tolist()}]"
        )


def make_phantom(kind: str, grid: Grid, **params) -> Medium:
    """Build a synthetic medium on `grid`.

    Kinds
    -----
    constant
        Uniform n = n_c, sigma = sigma_c.
    smooth_bump
        Constant background plus one C^2 bump on each coefficient
        (amplitudes amp_n / amp_sigma, common center and radius).
    two_inclusions
        Constant background plus two bumps with per-inclusion parameters
        (centers, radii, amps_n, amps_sigma).

    Perturbations are compactly supported and vanish on a 2-cell collar next
    to every face, so compact-support hypotheses hold discretely.
    """
    omega = float(params.pop("omega", 1.0))
    n_c = float(params.pop("n_c", 1.0))
    sigma_c = float(params.pop("sigma_c", 0.0))
    n = np.full(grid.dims, n_c)
    sigma = np.full(grid.dims, sigma_c)

    if kind == "constant":
        pass
    elif kind == "smooth_bump":
        center = params.pop("center", grid.center())
        radius = float(params.pop("radius", 0.27 * min(grid.lengths)))
        amp_n = float(params.pop("amp_n", 0.0))
        amp_sigma = float(params.pop("amp_sigma", 0.0))
        profile = params.pop("profile", "c2")
        if amp_n != 0.0 or amp_sigma != 0.0:
            _check_bump_inside(grid, center, radius)
            prof = _bump_profile(grid, center, radius, profile)
            n = n + amp_n * prof
            sigma = sigma + amp_sigma * prof
    elif kind == "two_inclusions":
        c0 = grid.center()
        span = 0.18 * min(grid.lengths)
        centers = params.pop(
            "centers", [c0 - np.array([span, 0, 0]), c0 + np.array([span, 0, 0])]
        )
        radii = params.pop("radii", [0.2 * min(grid.lengths)] * 2)
        amps_n = params.pop("amps_n", [0.0, 0.0])
        amps_sigma = params.pop("amps_sigma", [0.0, 0.0])
        for center, radius, an, asig in zip(centers, radii, amps_n, amps_sigma):
            if an == 0.0 and asig == 0.0:
                continue
            _check_bump_inside(grid, center, float(radius))
            prof = _bump_profile(grid, center, float(radius))
            n = n + float(an) * prof
            sigma = sigma + float(asig) * prof
    else:
        raise ParamError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")

    if params:
        raise ParamError(f"unused phantom parameters: {sorted(params)}")
    if n.min() <= 0:
        raise ParamError("bump amplitude drives n <= 0")
    if sigma.min() < 0:
        raise ParamError("bump amplitude drives sigma < 0")
    return Medium(grid=grid, n=n, sigma=sigma, omega=omega)
