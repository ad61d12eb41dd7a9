"""FFT-based Faddeev kernel and the Neumann-series remainder construction.

The whole-space problem is approximated on a periodic box twice the size of
the medium box, with the coefficient perturbation supported in the inner
half.  The kernel G_zeta inverts -(Lap + 2 i zeta . grad) as a Fourier
multiplier with denominator xi.xi + 2 zeta.xi.  The frequency lattice is
offset by half a mode per axis (an anti-periodic extension, realized by
modulation); the unshifted lattice always contains the resonant zero mode,
while on the shifted one min |denominator| >= 2 s pi / L whenever rho is a
coordinate axis.  Frequencies that still land near the resonant set raise
ResonanceError rather than being regularized away.

Differential forms in three dimensions are stored concretely: 1-forms as
complex 3-vectors, 2-forms as 3-vectors through the Hodge identification.
The vee/wedge operations then read

    alpha vee Q          = alpha x Q          (1-form from a 2-form)
    alpha wedge R        = alpha x R          (2-form from two 1-forms)
    (R vee d) alpha      = (R . grad) alpha   (componentwise)
    <alpha, alpha>       = alpha . alpha      (bilinear, non-Hermitian)
    delta alpha          = -div alpha
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoContraction, ParamError, ResonanceError, SupportError
from .forward import VectorField, grad, div
from .illum import CgoParams, cgo_params
from .medium import Grid, Medium, eval_q

DENOM_FLOOR_FACTOR = 1e-6
WEIGHT_THETA = -0.55  # L^2_theta weight exponent, any theta in (-1, 0) works
DEFAULT_SHIFT = (0.5, 0.5, 0.5)


# --- extended (periodic) box -------------------------------------------------


def extend_medium(medium: Medium) -> Medium:
    """Embed the medium in a box of twice the side length, padding the
    coefficients with their boundary-collar (background) values.  The
    original grid sits centered in the extension."""
    g = medium.grid
    dims2 = tuple(2 * d for d in g.dims)
    off = tuple(d // 2 for d in g.dims)
    origin2 = tuple(g.origin[a] - off[a] * g.spacing for a in range(3))
    n_bg = float(medium.n[0, 0, 0])
    s_bg = float(medium.sigma[0, 0, 0])
    n2 = np.full(dims2, n_bg)
    s2 = np.full(dims2, s_bg)
    sl = tuple(slice(off[a], off[a] + g.dims[a]) for a in range(3))
    n2[sl] = medium.n
    s2[sl] = medium.sigma
    grid2 = Grid(dims=dims2, spacing=g.spacing, origin=origin2)
    return Medium(grid=grid2, n=n2, sigma=s2, omega=medium.omega,
                  n_floor=medium.n_floor)


def restrict_to(grid_sub: Grid, grid_ext: Grid, arr: np.ndarray) -> np.ndarray:
    """Restrict an extended-box array to the embedded sub-grid."""
    off = [int(round((grid_sub.origin[a] - grid_ext.origin[a]) / grid_ext.spacing))
           for a in range(3)]
    sl = tuple(slice(off[a], off[a] + grid_sub.dims[a]) for a in range(3))
    if arr.ndim == 4:
        return arr[(slice(None), *sl)]
    return arr[sl]


def check_collar_support(arr: np.ndarray, collar: int = 2, tol: float = 1e-12,
                         what: str = "perturbation") -> None:
    """SupportError unless `arr` vanishes on the outer `collar` layers."""
    mask = np.ones(arr.shape[-3:], dtype=bool)
    mask[collar:-collar, collar:-collar, collar:-collar] = False
    mx = float(np.max(np.abs(arr[..., mask]))) if mask.any() else 0.0
    scale = float(np.max(np.abs(arr))) + 1e-300
    if mx > tol * max(1.0, scale):
        raise SupportError(
            f"{what} does not vanish on the {collar}-cell boundary collar "
            f"(max {mx:.3e})"
        )


# --- Faddeev kernel ------------------------------------------------------------


@dataclass
class FaddeevKernel:
    """Fourier-multiplier inverse of -(Lap + 2 i zeta . grad) on a periodic box.

    Frequencies are xi = 2 pi (m + shift) / L per axis, m integer; the
    half-mode default shift keeps the lattice clear of the resonant set
    {xi.xi + 2 zeta.xi = 0} for coordinate-axis rho.
    """

    grid: Grid
    zeta: np.ndarray
    denom_floor: float | None = None
    shift: tuple = DEFAULT_SHIFT
    denom: np.ndarray = field(init=False, repr=False)
    min_denom: float = field(init=False)
    _mod: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=complex)
        g = self.grid
        L = g.lengths
        zeta_norm2 = float(np.sum(np.abs(self.zeta) ** 2))
        if self.denom_floor is None:
            self.denom_floor = DENOM_FLOOR_FACTOR * zeta_norm2
        freqs = []
        for a in range(3):
            m = np.fft.fftfreq(g.dims[a], d=1.0 / g.dims[a])  # integer modes
            freqs.append(2.0 * np.pi * (m + self.shift[a]) / L[a])
        X1, X2, X3 = np.meshgrid(*freqs, indexing="ij")
        xi2 = X1**2 + X2**2 + X3**2
        zdot = self.zeta[0] * X1 + self.zeta[1] * X2 + self.zeta[2] * X3
        self.denom = xi2 + 2.0 * zdot
        self.min_denom = float(np.min(np.abs(self.denom)))
        if self.min_denom <= self.denom_floor:
            raise ResonanceError(
                f"lattice frequency within {self.denom_floor:.3e} of the "
                f"resonant set (min |xi^2 + 2 zeta.xi| = {self.min_denom:.3e}); "
                "choose a different s or box length"
            )
        # modulation that maps the shifted lattice onto integer FFT modes
        ax = [np.arange(g.dims[a]) * g.spacing for a in range(3)]
        ph = [np.exp(-2j * np.pi * self.shift[a] * ax[a] / L[a]) for a in range(3)]
        self._mod = ph[0][:, None, None] * ph[1][None, :, None] * ph[2][None, None, :]
        self._freqs = (X1, X2, X3)

    def _to_modes(self, f: np.ndarray) -> np.ndarray:
        return np.fft.fftn(f * self._mod, axes=(-3, -2, -1))

    def _from_modes(self, fh: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(fh, axes=(-3, -2, -1)) * np.conj(self._mod)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """G_zeta f, componentwise over any leading axes."""
        return self._from_modes(self._to_modes(np.asarray(f, complex)) / self.denom)

    def apply_operator(self, u: np.ndarray) -> np.ndarray:
        """-(Lap + 2 i zeta . grad) u through the same lattice (exact inverse
        of `apply`)."""
        return self._from_modes(self._to_modes(np.asarray(u, complex)) * self.denom)

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral d/dx_axis on the shifted lattice."""
        return self._from_modes(1j * self._freqs[axis] * self._to_modes(f))

    def sobolev_weight(self, f: np.ndarray, order: float) -> np.ndarray:
        """(I - Lap)^{order/2} f as a Fourier multiplier on the same lattice."""
        X1, X2, X3 = self._freqs
        w = (1.0 + X1**2 + X2**2 + X3**2) ** (order / 2.0)
        return self._from_modes(self._to_modes(f) * w)


def faddeev_apply(kernel: FaddeevKernel, f: np.ndarray) -> np.ndarray:
    """Apply the Faddeev kernel to a (stack of) scalar field(s)."""
    return kernel.apply(f)


def weighted_l2(grid: Grid, f: np.ndarray, theta: float = WEIGHT_THETA) -> float:
    """Discrete L^2_theta norm with weight <x - c>^theta about the box center."""
    xx, yy, zz = grid.meshgrid()
    c = grid.center()
    w = (1.0 + (xx - c[0]) ** 2 + (yy - c[1]) ** 2 + (zz - c[2]) ** 2) ** (theta / 2)
    return float(np.sqrt(np.sum((np.abs(f) ** 2) * w**2) * grid.spacing**3))


# --- background structure fields ----------------------------------------------


def background_constants(medium: Medium) -> tuple[float, float]:
    """(n_c, k): the collar value of n and the wavenumber omega sqrt(n_c).

    The collar values of (n - n_c, sigma) must vanish so gamma0 - 1 is
    compactly supported; otherwise SupportError.
    """
    n_c = float(medium.n[0, 0, 0])
    check_collar_support(medium.n - n_c, what="n - n_c")
    check_collar_support(medium.sigma, what="sigma")
    k = medium.omega * float(np.sqrt(n_c))
    return n_c, k


def gamma0_field(medium: Medium) -> np.ndarray:
    """gamma0 = q / k^2 (equals 1 on the collar)."""
    _, k = background_constants(medium)
    return eval_q(medium) / k**2


def build_alpha_q(medium: Medium) -> tuple[np.ndarray, np.ndarray]:
    """alpha = d gamma0 / gamma0 (centered differences) and
    frak_q = (1/4) <alpha, alpha> + (1/2) div alpha, both compactly supported.

    The sign of the divergence term comes from delta(dg) = -Lap g in the
    adjoint-derivative convention.
    """
    g0 = gamma0_field(medium)
    h = medium.grid.spacing
    alpha = grad(g0, h) / g0[None]
    frak_q = 0.25 * np.sum(alpha * alpha, axis=0) + 0.5 * div(alpha, h)
    return alpha, frak_q


def _structure_fields_spectral(medium: Medium, kernel: FaddeevKernel):
    """alpha, its gradient stack and frak_q on the kernel's lattice.

    alpha is the spectral gradient of log gamma0 (principal log), which makes
    d alpha = 0 and the Hessian symmetry of grad alpha exact in the lattice
    calculus; mixing finite differences into the series leaves an O(h^2)
    floor in the background-equation residual of the assembled field.
    """
    g0 = gamma0_field(medium)
    log_g0 = np.log(g0)
    alpha = np.stack([kernel.derivative(log_g0, a) for a in range(3)])
    dalpha = np.stack(
        [np.stack([kernel.derivative(alpha[kc], a) for kc in range(3)])
         for a in range(3)]
    )
    div_alpha = sum(kernel.derivative(alpha[a], a) for a in range(3))
    frak_q = 0.25 * np.sum(alpha * alpha, axis=0) + 0.5 * div_alpha
    return g0, alpha, dalpha, frak_q


# --- Neumann series ------------------------------------------------------------


@dataclass
class RemainderPair:
    """Converged remainder pair of the CGO construction.

    R is the 1-form remainder, Q the 2-form d-tilde(eta_hat + R_hat) stored
    as a 3-vector field; both live on the extended periodic box.
    """

    grid: Grid
    R: np.ndarray
    Q: np.ndarray
    series_terms: int
    tail_norm: float
    term_norms: list
    ratios: list

    def r_field(self) -> VectorField:
        return VectorField(grid=self.grid, values=self.R)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim == 1 and b.ndim > 1:
        a = a.reshape((3,) + (1,) * (b.ndim - 1))
    if b.ndim == 1 and a.ndim > 1:
        b = b.reshape((3,) + (1,) * (a.ndim - 1))
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=complex)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


def _directional(vec: np.ndarray, dalpha: np.ndarray) -> np.ndarray:
    """(vec . grad) alpha given the precomputed gradient stack
    dalpha[a, k] = d alpha_k / d x_a."""
    return np.einsum("a...,ak...->k...", vec, dalpha)


def neumann_series_rq(medium: Medium, params: CgoParams, tol: float = 1e-8,
                      m_cap: int = 60, kernel: FaddeevKernel | None = None,
                      extended: Medium | None = None) -> RemainderPair:
    """Solve the (R, Q) system by the Neumann decomposition.

    The leading pair solves

        -(Lap + 2 i zeta . grad) R0 = (eta.grad) alpha + k^2 (gamma0 - 1) eta
                                       - frak_q eta
        -(Lap + 2 i zeta . grad) Q0 = k^2 sqrt(gamma0) alpha x eta

    and subsequent terms apply the same kernel to

        M1(R, Q) = sqrt(gamma0) alpha x Q + (R.grad) alpha
                   + k^2 (gamma0 - 1) R - frak_q R
        M2(R, Q) = k^2 sqrt(gamma0) alpha x R + k^2 (gamma0 - 1) Q.

    Terminates when the combined term norm falls below tol relative to the
    accumulated solution, or raises NoContraction when the term ratio
    reaches 1 (raise s).
    """
    ext = extended if extended is not None else extend_medium(medium)
    n_c, k = background_constants(ext)
    if abs(k - params.k) > 1e-9 * max(1.0, k):
        raise ParamError(
            f"params.k = {params.k} does not match omega sqrt(n_c) = {k}"
        )
    ker = kernel if kernel is not None else FaddeevKernel(grid=ext.grid,
                                                          zeta=params.zeta)
    g0, alpha, dalpha, frak_q = _structure_fields_spectral(ext, ker)
    sqrt_g0 = np.sqrt(g0)  # principal branch
    gm1 = g0 - 1.0
    eta = params.eta_zeta
    zeta = np.asarray(params.zeta)
    eta_field = eta[:, None, None, None] * np.ones(ext.grid.dims)[None]
    # Q splits as (decaying part) + i zeta ^ eta: the exterior derivative
    # d-tilde(eta_hat + R_hat) tends to the constant 2-form i zeta ^ eta at
    # infinity, which the decaying Neumann iterates cannot carry.  Moving
    # that constant to the right-hand side adds two compactly supported
    # sources; without them the assembled field fails the Maxwell system at
    # first order in the perturbation.
    q_inf = _cross(1j * zeta, eta).reshape(3, 1, 1, 1)

    src_r = (_directional(eta_field, dalpha)
             + k**2 * gm1[None] * eta_field
             - frak_q[None] * eta_field
             + sqrt_g0[None] * _cross(alpha, q_inf))
    src_q = (k**2 * sqrt_g0[None] * _cross(alpha, eta_field)
             + k**2 * gm1[None] * q_inf)

    R_m = ker.apply(src_r)
    Q_m = ker.apply(src_q)
    R = R_m.copy()
    Q = Q_m.copy()

    def pair_norm(r, q):
        return weighted_l2(ext.grid, r) + weighted_l2(ext.grid, q)

    term_norms = [pair_norm(R_m, Q_m)]
    ratios = []
    m = 0
    while True:
        sol_norm = pair_norm(R, Q) + 1e-300
        if term_norms[-1] <= tol * sol_norm:
            break
        if m >= m_cap:
            break
        m1 = (sqrt_g0[None] * _cross(alpha, Q_m)
              + _directional(R_m, dalpha)
              + k**2 * gm1[None] * R_m
              - frak_q[None] * R_m)
        m2 = (k**2 * sqrt_g0[None] * _cross(alpha, R_m)
              + k**2 * gm1[None] * Q_m)
        R_m = ker.apply(m1)
        Q_m = ker.apply(m2)
        nrm = pair_norm(R_m, Q_m)
        ratios.append(nrm / term_norms[-1])
        if ratios[-1] >= 1.0:
            raise NoContraction(
                f"term ratio {ratios[-1]:.3f} >= 1 at m = {m + 1}; "
                "|zeta| too small, raise s"
            )
        term_norms.append(nrm)
        R += R_m
        Q += Q_m
        m += 1
    contraction = max(ratios) if ratios else 0.0
    tail = term_norms[-1] * contraction / max(1e-12, 1.0 - contraction) \
        if ratios else term_norms[-1]
    return RemainderPair(grid=ext.grid, R=R, Q=Q, series_terms=m,
                         tail_norm=float(tail), term_norms=term_norms,
                         ratios=ratios)


def _spectral_curl(kernel: FaddeevKernel, v: np.ndarray) -> np.ndarray:
    d = kernel.derivative
    out = np.empty_like(v)
    out[0] = d(v[2], 1) - d(v[1], 2)
    out[1] = d(v[0], 2) - d(v[2], 0)
    out[2] = d(v[1], 0) - d(v[0], 1)
    return out


def _curl_z(kernel: FaddeevKernel, zeta: np.ndarray, v: np.ndarray,
            const: np.ndarray | None = None) -> np.ndarray:
    """Conjugated curl (curl + i zeta x) of v + const.

    The constant part must be handled analytically: it is not representable
    on the shifted (anti-periodic) lattice, while v is in that basis by
    construction.  Curls of constants vanish, so the constant contributes
    only i zeta x const.
    """
    out = _spectral_curl(kernel, v) + _cross(1j * zeta, v)
    if const is not None:
        out = out + _cross(1j * zeta, const)
    return out


def recompute_q_from_r(medium_ext: Medium, params: CgoParams,
                       pair: RemainderPair,
                       kernel: FaddeevKernel) -> np.ndarray:
    """Independent decaying Q: d-tilde(eta_hat + R_hat) minus its constant
    value i zeta ^ eta at infinity, applied spectrally to the decaying part
    of gamma0^{-1/2}(eta + R)."""
    g0 = gamma0_field(medium_ext)
    eta = params.eta_zeta
    zeta = np.asarray(params.zeta)
    eta_c = eta.reshape(3, 1, 1, 1)
    vec = (eta_c + pair.R) / np.sqrt(g0)[None]
    return _curl_z(kernel, zeta, vec - eta_c)


@dataclass
class CgoField:
    """Assembled CGO solution restricted to the medium grid, with diagnostics."""

    field: VectorField
    pair: RemainderPair
    params: CgoParams
    min_abs: float
    residual: float  # relative residual of the discrete background equation


def conjugated_curlcurl_residual(medium_ext: Medium, params: CgoParams,
                                 pair: RemainderPair, kernel: FaddeevKernel,
                                 collar: int = 2) -> float:
    """Relative residual of -curl curl E + q0 E = 0 for the assembled CGO
    field, evaluated in the conjugated variables F = gamma0^{-1/2}(eta + R)
    with spectral derivatives (curl_z = curl + i zeta x):

        -curl_z curl_z F + q0 F,

    normalized by the magnitudes of its two parts, away from the wrap-around
    collar of the periodic box.
    """
    g0 = gamma0_field(medium_ext)
    q0 = eval_q(medium_ext)
    eta = params.eta_zeta
    zeta = np.asarray(params.zeta)
    eta_c = eta.reshape(3, 1, 1, 1)
    F = (eta_c + pair.R) / np.sqrt(g0)[None]
    k2 = float(np.real(np.sum(zeta * zeta)))
    # curl_z curl_z of the constant part: i zeta x (i zeta x eta) = k^2 eta - zeta (zeta.eta)
    cc_const = (k2 * eta - zeta * np.sum(zeta * eta)).reshape(3, 1, 1, 1)
    cc = _curl_z(kernel, zeta, _curl_z(kernel, zeta, F - eta_c)) + cc_const
    res = -cc + q0[None] * F
    dims = medium_ext.grid.dims
    inner = tuple(slice(dims[a] // 4, dims[a] - dims[a] // 4) for a in range(3))
    num = np.linalg.norm(res[(slice(None), *inner)])
    den = (np.linalg.norm(cc[(slice(None), *inner)])
           + np.linalg.norm((q0[None] * F)[(slice(None), *inner)]))
    return float(num / max(den, 1e-300))


def cgo_field(medium: Medium, params: CgoParams, tol: float = 1e-8,
              m_cap: int = 60) -> CgoField:
    """Assemble E_zeta = gamma0^{-1/2} exp(i x.zeta) (eta_zeta + R) on the
    medium grid (principal square-root branch), reporting min |E_zeta| over
    the medium box and the discrete background-equation residual."""
    ext = extend_medium(medium)
    kernel = FaddeevKernel(grid=ext.grid, zeta=params.zeta)
    pair = neumann_series_rq(medium, params, tol=tol, m_cap=m_cap,
                             kernel=kernel, extended=ext)
    g0 = gamma0_field(ext)
    xx, yy, zz = ext.grid.meshgrid()
    zeta = np.asarray(params.zeta)
    phase = np.exp(1j * (zeta[0] * xx + zeta[1] * yy + zeta[2] * zz))
    eta = params.eta_zeta
    vals_ext = (phase / np.sqrt(g0))[None] * (eta[:, None, None, None] + pair.R)
    vals = restrict_to(medium.grid, ext.grid, vals_ext)
    residual = conjugated_curlcurl_residual(ext, params, pair, kernel)
    fld = VectorField(grid=medium.grid, values=np.ascontiguousarray(vals))
    min_abs = float(np.min(np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))))
    return CgoField(field=fld, pair=pair, params=params, min_abs=min_abs,
                    residual=residual)


# --- sweeps ----------------------------------------------------------------------


def faddeev_decay_study(medium: Medium, rho, rho_perp, s_values,
                        source: np.ndarray | None = None) -> dict:
    """||G_zeta f||_theta over an s sweep for a fixed compactly supported f.

    Returns a dict with per-s rows and the fitted slope of
    log ||G_zeta f|| against log |zeta| (expected near -1).
    """
    ext = extend_medium(medium)
    _, k = background_constants(ext)
    if source is None:
        c = ext.grid.center()
        xx, yy, zz = ext.grid.meshgrid()
        r2 = (xx - c[0]) ** 2 + (yy - c[1]) ** 2 + (zz - c[2]) ** 2
        radius = 0.2 * min(ext.grid.lengths)
        source = np.clip(1.0 - r2 / radius**2, 0.0, None) ** 3
    rows = []
    nf = weighted_l2(ext.grid, source, WEIGHT_THETA + 1.0)
    for s in s_values:
        p = cgo_params(s, rho, rho_perp, k)
        ker = FaddeevKernel(grid=ext.grid, zeta=p.zeta)
        g = ker.apply(source.astype(complex))
        norm = weighted_l2(ext.grid, g)
        rows.append({"s": float(s), "zeta_norm": p.zeta_norm,
                     "g_norm": norm, "bound_ratio": norm * p.zeta_norm / nf,
                     "min_denom": ker.min_denom})
    x = np.log([r["zeta_norm"] for r in rows])
    y = np.log([r["g_norm"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0])
    return {"rows": rows, "slope": slope, "f_norm": nf}


def remainder_decay_study(medium: Medium, rho, rho_perp, s_values,
                          tol: float = 1e-8) -> dict:
    """||R|| |zeta| / |eta| over an s sweep plus the |eta|-normalized slope."""
    ext = extend_medium(medium)
    _, k = background_constants(ext)
    rows = []
    for s in s_values:
        p = cgo_params(s, rho, rho_perp, k)
        pair = neumann_series_rq(medium, p, tol=tol, extended=ext)
        rnorm = weighted_l2(ext.grid, pair.R)
        eta_norm = float(np.linalg.norm(p.eta_zeta))
        rows.append({
            "s": float(s), "zeta_norm": p.zeta_norm, "r_norm": rnorm,
            "eta_norm": eta_norm,
            "bound_ratio": rnorm * p.zeta_norm / eta_norm,
            "terms": pair.series_terms, "tail": pair.tail_norm,
        })
    x = np.log([r["zeta_norm"] for r in rows])
    y = np.log([r["r_norm"] / r["eta_norm"] for r in rows])
    slope = float(np.polyfit(x, y, 1)[0])
    ratios = [r["bound_ratio"] for r in rows]
    return {"rows": rows, "slope": slope,
            "ratio_variation": float(max(ratios) / min(ratios))}


def choose_s(medium: Medium, rho, rho_perp, tol: float = 1e-6,
             s_cap: float = 1e4) -> float:
    """Smallest s of the doubling sweep 10(1+k), 20(1+k), ... for which the
    Neumann series contracts (the existence threshold s0 is not constructive,
    so it is measured)."""
    ext = extend_medium(medium)
    _, k = background_constants(ext)
    s = 10.0 * (1.0 + k)
    while s < s_cap:
        try:
            p = cgo_params(s, rho, rho_perp, k)
            neumann_series_rq(medium, p, tol=tol, m_cap=8, extended=ext)
            return s
        except (NoContraction, ResonanceError):
            s *= 2.0
    raise NoContraction(f"no contracting s found below {s_cap}")
