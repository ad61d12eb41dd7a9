"""Boundary illuminations: exact plane waves for constant background and
complex-frequency (CGO) parameter pairs, plus the n+1 direction-pair family
whose limiting field directions separate every nonzero wavevector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DimensionError, OrthogonalityError
from .forward import BoundaryIllumination, VectorField, boundary_trace  # noqa: F401
from .medium import Grid

ORTHO_TOL = 1e-12


def _bilinear(a: np.ndarray, b: np.ndarray) -> complex:
    """Non-Hermitian dot product sum_k a_k b_k."""
    return complex(np.sum(np.asarray(a) * np.asarray(b)))


@dataclass(frozen=True)
class PlaneWaveParams:
    """Parameters of an exact plane-wave solution eta exp(i zeta.x) for
    constant background q0: zeta.zeta = q0 (bilinear) and zeta.eta = 0."""

    zeta: np.ndarray
    eta: np.ndarray
    q0: complex

    def __post_init__(self):
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=complex))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=complex))
        object.__setattr__(self, "q0", complex(self.q0))

    def constraint_errors(self) -> tuple[float, float]:
        """Relative |zeta.zeta - q0| and |zeta.eta| diagnostics."""
        scale = max(abs(self.q0), 1e-300)
        e1 = abs(_bilinear(self.zeta, self.zeta) - self.q0) / scale
        e2 = abs(_bilinear(self.zeta, self.eta)) / max(
            np.linalg.norm(self.zeta) * np.linalg.norm(self.eta), 1e-300
        )
        return e1, e2


def _complement_pair(eta_dir: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair spanning the complement of eta_dir."""
    order = np.argsort(np.abs(eta_dir))  # axes most orthogonal to eta first
    u = np.zeros(3)
    u[order[0]] = 1.0
    u = u - np.dot(u, eta_dir) * eta_dir
    u /= np.linalg.norm(u)
    v = np.cross(eta_dir, u)
    # keep the (u, v) handedness aligned with ascending axis order
    w = np.zeros(3)
    w[order[1]] = 1.0
    if np.dot(v, w) < 0:
        v = -v
    return u, v


def plane_wave_params(q0: complex, eta_dir) -> PlaneWaveParams:
    """Construct zeta = (a + i b) u with u a deterministic unit vector
    perpendicular to the real unit polarization eta_dir, where (a, b) solve
    a^2 - b^2 = Re q0 and 2ab = Im q0 (a + i b is the principal sqrt(q0)).

    Real and imaginary parts of zeta must share a direction: for orthogonal
    parts the bilinear square a^2 - b^2 + 2iab (u.v) loses its imaginary
    term and zeta.zeta = q0 becomes unsatisfiable for lossy media.
    """
    eta_dir = np.asarray(eta_dir, dtype=float)
    nrm = np.linalg.norm(eta_dir)
    if nrm < 1e-12:
        raise DegenerateInput("eta_dir is (numerically) zero")
    eta_dir = eta_dir / nrm
    q0 = complex(q0)
    u, _ = _complement_pair(eta_dir)
    zeta = np.sqrt(q0) * u
    return PlaneWaveParams(zeta=zeta, eta=eta_dir.astype(complex), q0=q0)


def plane_wave_field(params: PlaneWaveParams, grid: Grid) -> VectorField:
    """Evaluate eta exp(i zeta.x) on the grid nodes."""
    xx, yy, zz = grid.meshgrid()
    phase = np.exp(1j * (params.zeta[0] * xx + params.zeta[1] * yy + params.zeta[2] * zz))
    vals = params.eta[:, None, None, None] * phase[None]
    return VectorField(grid=grid, values=vals)


@dataclass(frozen=True)
class DirectionFamily:
    """The n+1 direction pairs (rho_j, rho_j_perp) used for CGO illuminations."""

    n_dim: int
    pairs: tuple

    def limit_directions(self) -> list[np.ndarray]:
        """Unit limiting field directions z_inf = (-i rho + rho_perp)/sqrt(2)."""
        return [
            (-1j * rho + rho_perp) / np.sqrt(2.0) for rho, rho_perp in self.pairs
        ]


def direction_family(n_dim: int = 3) -> DirectionFamily:
    """The canonical n+1 pairs: the first n share rho = e_n with distinct
    rho_perp in span{e_1, ..., e_{n-1}} (axes, then the (e_1+e_2) diagonal);
    the last pair is (e_1, (e_2 + e_n)/sqrt(2))."""
    if n_dim < 3:
        raise DimensionError("direction family requires dimension >= 3")
    eye = np.eye(n_dim)
    pairs = []
    for j in range(n_dim - 1):
        pairs.append((eye[n_dim - 1].copy(), eye[j].copy()))
    pairs.append((eye[n_dim - 1].copy(), (eye[0] + eye[1]) / np.sqrt(2.0)))
    pairs.append((eye[0].copy(), (eye[1] + eye[n_dim - 1]) / np.sqrt(2.0)))
    return DirectionFamily(n_dim=n_dim, pairs=tuple(pairs))


def plane_wave_family(q0: complex, grid: Grid | None = None):
    """Four plane waves whose real polarizations are the rho_perp directions
    of the 3D direction family; their unit directions separate every nonzero
    wavevector, which is what the 4-illumination rank condition needs.

    Returns the parameter list, or (params, fields) when a grid is given.
    """
    fam = direction_family(3)
    params = [plane_wave_params(q0, rho_perp) for _, rho_perp in fam.pairs]
    if grid is None:
        return params
    fields = [plane_wave_field(p, grid) for p in params]
    return params, fields


@dataclass(frozen=True)
class CgoParams:
    """Complex-frequency parameters zeta = -i s rho + sqrt(s^2 + k^2) rho_perp
    and the admissible amplitude eta_zeta; <zeta, zeta> = k^2 bilinearly."""

    s: float
    rho: np.ndarray
    rho_perp: np.ndarray
    k: float
    a_vec: np.ndarray
    b_vec: np.ndarray
    zeta: np.ndarray = field(init=False)
    eta_zeta: np.ndarray = field(init=False)
    z_inf: np.ndarray = field(init=False)

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        rho_perp = np.asarray(self.rho_perp, dtype=float)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "rho_perp", rho_perp)
        object.__setattr__(self, "a_vec", np.asarray(self.a_vec, dtype=complex))
        object.__setattr__(self, "b_vec", np.asarray(self.b_vec, dtype=complex))
        s, k = float(self.s), float(self.k)
        zeta = -1j * s * rho + np.sqrt(s * s + k * k) * rho_perp
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "z_inf", (-1j * rho + rho_perp) / np.sqrt(2.0))
        zn = np.linalg.norm(zeta)
        za = _bilinear(zeta, self.a_vec)
        eta = (-za * zeta - k * np.cross(zeta, self.b_vec) + k * k * self.a_vec) / zn
        object.__setattr__(self, "eta_zeta", eta)

    @property
    def zeta_norm(self) -> float:
        """|zeta| = sqrt(2 s^2 + k^2) (Hermitian norm)."""
        return float(np.sqrt(2.0 * self.s**2 + self.k**2))

    def bilinear_zeta(self) -> complex:
        return _bilinear(self.zeta, self.zeta)


def cgo_params(s: float, rho, rho_perp, k: float, a_vec=None, b_vec=None) -> CgoParams:
    """Build CGO parameters for a direction pair.

    Defaults follow the construction used for the ellipticity argument:
    a_vec = conj(z_inf) so that z_inf . a = 1, and b_vec = 0.
    """
    rho = np.asarray(rho, dtype=float)
    rho_perp = np.asarray(rho_perp, dtype=float)
    if s <= 0 or k <= 0:
        raise DegenerateInput("s and k must be positive")
    for name, vec in (("rho", rho), ("rho_perp", rho_perp)):
        if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
            raise OrthogonalityError(f"{name} must be a unit vector")
    if abs(float(np.dot(rho, rho_perp))) > ORTHO_TOL:
        raise OrthogonalityError("rho and rho_perp must be orthogonal")
    z_inf = (-1j * rho + rho_perp) / np.sqrt(2.0)
    if a_vec is None:
        a_vec = np.conj(z_inf)
    if b_vec is None:
        b_vec = np.zeros(3)
    return CgoParams(s=float(s), rho=rho, rho_perp=rho_perp, k=float(k),
                     a_vec=a_vec, b_vec=b_vec)


def separation_gap(family: DirectionFamily, xi_samples: int = 10000,
                   seed: int = 0) -> float:
    """Brute-force check that xi -> (|z_inf_j . xi|)_j separates directions:
    minimum over sphere samples of the largest pairwise difference."""
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(xi_samples, family.n_dim))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    z = np.stack(family.limit_directions())  # (J, n)
    m = np.abs(xi @ z.T)  # (S, J)
    gap = np.max(m[:, :, None] - m[:, None, :], axis=(1, 2))
    return float(gap.min())
