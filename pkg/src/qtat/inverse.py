"""Linearized redundant system, normal-operator solve and Gauss-Newton loop.

The unknown collects the field perturbations and the coefficient pair,

    w = (dE_1, dE_1*, ..., dE_J, dE_J*, dsigma, dn),

with the conjugate blocks structural (dE* = conj(dE); real/imaginary parts
are the actual degrees of freedom).  Rows are the linearized elliptic
Maxwell residuals, their conjugates, and the Laplacian of the linearized
internal data, all on interior nodes; the fourth-order normal equations are
solved with two layers of Dirichlet data (value + first interior layer,
encoding the trace and its normal derivative to first order) by conjugate
gradients on A^T A + eps I with a per-field spectral (sine-transform)
biharmonic preconditioner.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import IllPosedWarning, NoConvergence, Divergence, GridMismatch
from .forward import (
    BoundaryIllumination,
    InternalData,
    SolverConfig,
    VectorField,
    grad_div,
    grad_div_full,
    internal_data,
    lap7,
    lap7_full,
    solve_forward,
)
from .medium import Grid, Medium, eval_q


def frechet_dh(sigma: np.ndarray, E_j: VectorField, dE_j: VectorField,
               dsigma: np.ndarray) -> np.ndarray:
    """Frechet derivative of the internal data,

        dH = sigma (dE . E* + E . dE*) + dsigma |E|^2,

    real-valued by construction (the conjugate terms sum to twice the real
    part)."""
    E_j.grid.check_same(dE_j.grid)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != E_j.grid.dims:
        raise GridMismatch("sigma shape does not match the field grid")
    cross = 2.0 * np.real(np.sum(dE_j.values * np.conj(E_j.values), axis=0))
    return sigma * cross + np.asarray(dsigma, float) * np.sum(
        np.abs(E_j.values) ** 2, axis=0
    )


# --- unknown container --------------------------------------------------------


@dataclass
class Perturbation:
    """Unknown block (dE_j complex fields; dsigma, dn real fields).

    dn is None when the refractive-index perturbation is frozen.
    """

    dE: np.ndarray           # (J, 3, *dims) complex
    dsigma: np.ndarray       # (*dims) real
    dn: np.ndarray | None    # (*dims) real or None

    @classmethod
    def zeros(cls, J: int, dims, freeze_dn: bool = False) -> "Perturbation":
        return cls(
            dE=np.zeros((J, 3, *dims), dtype=complex),
            dsigma=np.zeros(dims),
            dn=None if freeze_dn else np.zeros(dims),
        )

    def copy(self) -> "Perturbation":
        return Perturbation(self.dE.copy(), self.dsigma.copy(),
                            None if self.dn is None else self.dn.copy())

    def axpy(self, a: float, other: "Perturbation") -> None:
        self.dE += a * other.dE
        self.dsigma += a * other.dsigma
        if self.dn is not None:
            self.dn += a * other.dn

    def scaled(self, a: float) -> "Perturbation":
        return Perturbation(a * self.dE, a * self.dsigma,
                            None if self.dn is None else a * self.dn)

    def dot(self, other: "Perturbation") -> float:
        s = float(np.sum(self.dE.real * other.dE.real
                         + self.dE.imag * other.dE.imag))
        s += float(np.sum(self.dsigma * other.dsigma))
        if self.dn is not None:
            s += float(np.sum(self.dn * other.dn))
        return s

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))

    def mask_free(self, mask: np.ndarray) -> "Perturbation":
        out = self.copy()
        out.dE *= mask
        out.dsigma *= mask
        if out.dn is not None:
            out.dn *= mask
        return out

    def mask_shell(self, mask: np.ndarray) -> "Perturbation":
        return self.mask_free(~mask)


@dataclass
class ResidualBlocks:
    """Range element: Maxwell residual blocks, their conjugates, data rows."""

    mx: np.ndarray        # (J, 3, *dims) complex, interior supported
    mx_conj: np.ndarray   # exact conjugates of their partners
    data: np.ndarray      # (J, *dims) real, interior supported

    def dot(self, other: "ResidualBlocks") -> float:
        s = float(np.sum(self.mx.real * other.mx.real
                         + self.mx.imag * other.mx.imag))
        s += float(np.sum(self.mx_conj.real * other.mx_conj.real
                          + self.mx_conj.imag * other.mx_conj.imag))
        s += float(np.sum(self.data * other.data))
        return s

    def norm(self) -> float:
        return float(np.sqrt(self.dot(self)))


# --- the linearized operator ----------------------------------------------------


@dataclass
class LinearizedSystem:
    """Matrix-free realization of the linearized redundant operator.

    Holds the background medium and fields plus every precomputed
    coefficient the row blocks need.  `apply` and `apply_adjoint` are exact
    transposes of one another (the operator is assembled from stencil and
    multiplication primitives whose adjoints are exact), which is what the
    discrete transpose test checks.
    """

    medium: Medium
    fields: list
    freeze_dn: bool = False
    reg: float = 0.0
    q: np.ndarray = field(init=False, repr=False)
    inv_q: np.ndarray = field(init=False, repr=False)
    E: np.ndarray = field(init=False, repr=False)          # (J, 3, *dims)
    E_abs2: np.ndarray = field(init=False, repr=False)     # (J, *dims)
    gd_qE: np.ndarray = field(init=False, repr=False)      # (J, 3, *dims)
    interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.medium.grid
        for F in self.fields:
            g.check_same(F.grid)
        self.q = eval_q(self.medium)
        self.inv_q = 1.0 / self.q
        self.E = np.stack([F.values for F in self.fields])
        self.E_abs2 = np.sum(np.abs(self.E) ** 2, axis=1)
        h = g.spacing
        self.gd_qE = np.stack(
            [grad_div(self.q[None] * self.E[j], h) for j in range(self.J)]
        )
        self.interior = g.interior_mask(1)

    @property
    def J(self) -> int:
        return len(self.fields)

    @property
    def grid(self) -> Grid:
        return self.medium.grid

    def _dq(self, w: Perturbation) -> np.ndarray:
        wgt = self.medium.omega
        dq = 1j * wgt * w.dsigma.astype(complex)
        if w.dn is not None:
            dq = dq + wgt * wgt * w.dn
        return dq

    def apply(self, w: Perturbation) -> ResidualBlocks:
        """Rows of the linearized system applied to w, interior nodes only.

        Maxwell block j (and its conjugate partner):

            lap dE_j + (1/q)[grad div, q] dE_j + q dE_j
              + dq E_j + (1/q) grad div(dq E_j) - (dq/q^2) grad div(q E_j)

        the last term vanishing on exact continuum backgrounds; keeping it
        makes the operator the exact derivative of the discrete residual
        map.  Data block j: lap applied to the linearization of
        sigma |E_j|^2 (the discrete product rule captures every lower-order
        term)."""
        g = self.grid
        h = g.spacing
        dq = self._dq(w)
        sig = self.medium.sigma
        qb = self.q[None, None]
        iqb = self.inv_q[None, None]
        dqb = dq[None, None]
        mx = (
            lap7(w.dE, h)
            + iqb * grad_div(qb * w.dE, h)
            - grad_div(w.dE, h)
            + qb * w.dE
            + dqb * self.E
            + iqb * grad_div(dqb * self.E, h)
            - (dq * self.inv_q**2)[None, None] * self.gd_qE
        ) * self.interior[None, None]
        gvals = sig[None] * 2.0 * np.real(np.sum(w.dE * np.conj(self.E), axis=1))
        gvals = gvals + w.dsigma[None] * self.E_abs2
        data = lap7(gvals, h) * self.interior[None]
        return ResidualBlocks(mx=mx, mx_conj=np.conj(mx), data=data)

    def apply_adjoint(self, r: ResidualBlocks) -> Perturbation:
        """Exact transpose of `apply` under the real pairing
        Re<.,.> on complex blocks (conjugate rows handled independently)."""
        g = self.grid
        h = g.spacing
        sig = self.medium.sigma
        qc = np.conj(self.q)[None, None]
        iqc = np.conj(self.inv_q)[None, None]
        s = (r.mx + np.conj(r.mx_conj)) * self.interior[None, None]
        gd_iqs = grad_div_full(iqc * s, h)
        # transpose of the dE couplings
        dE_out = (
            lap7_full(s, h)
            + qc * gd_iqs
            - grad_div_full(s, h)
            + qc * s
        )
        # transpose of the dq couplings
        dq_acc = np.sum(np.conj(self.E) * (s + gd_iqs), axis=(0, 1))
        dq_acc -= np.sum(np.conj(self.gd_qE * self.inv_q[None, None] ** 2) * s,
                         axis=(0, 1))
        # transpose of the data rows
        t = lap7_full(r.data * self.interior[None], h)
        dE_out += (2.0 * sig[None] * t)[:, None] * self.E
        dsig_out = np.sum(self.E_abs2 * t, axis=0)
        wgt = self.medium.omega
        dsig_out = dsig_out + wgt * np.imag(dq_acc)
        dn_out = None if self.freeze_dn else wgt * wgt * np.real(dq_acc)
        return Perturbation(dE=dE_out, dsigma=dsig_out, dn=dn_out)


def apply_linearized(sys: LinearizedSystem, w: Perturbation) -> ResidualBlocks:
    """Residual blocks A w of the linearized redundant system."""
    return sys.apply(w)


# --- normal solve ----------------------------------------------------------------


def _free_mask(grid: Grid) -> np.ndarray:
    """Free unknowns sit at depth >= 2; the two outer layers carry the
    Dirichlet value and (to first order) the normal derivative."""
    return grid.interior_mask(2)


class SymbolPreconditioner:
    """Frozen-coefficient symbol inverse of A^T A + eps in the sine basis.

    Coefficients are frozen at grid means (fields at their dominant
    polarization, extracted from the mean outer product E E^H); for every
    eigenfrequency of the Dirichlet Laplacian on the free cube the full
    real (6J+2)-dimensional Gram matrix of the symbol rows is assembled,
    capturing the field/coefficient coupling that per-field diagonal
    preconditioners miss, and its inverse is applied between DST-I
    transforms.  Quality only affects CG iteration counts, never the
    solution.
    """

    def __init__(self, sys: LinearizedSystem, eps: float):
        self.sys = sys
        g = sys.grid
        h = g.spacing
        m = [d - 4 for d in g.dims]
        self._core = tuple(slice(2, d - 2) for d in g.dims)
        lams = [
            (2.0 - 2.0 * np.cos(np.pi * np.arange(1, mi + 1) / (mi + 1))) / h**2
            for mi in m
        ]
        lam = (lams[0][:, None, None] + lams[1][None, :, None]
               + lams[2][None, None, :]).reshape(-1)          # (F,)
        xi = np.stack(np.meshgrid(*(np.sqrt(l) for l in lams),
                                  indexing="ij"), axis=-1).reshape(-1, 3)
        J = sys.J
        self.J = J
        self.freeze_dn = sys.freeze_dn
        nu = 6 * J + (1 if sys.freeze_dn else 2)
        q_bar = complex(np.mean(sys.q))
        sig_bar = float(np.mean(sys.medium.sigma))
        w = sys.medium.omega
        # dominant polarization per field from the mean coherency matrix
        Ebar = []
        p_bar = []
        for j in range(J):
            Ej_flat = sys.E[j].reshape(3, -1)
            M = (Ej_flat @ np.conj(Ej_flat).T) / Ej_flat.shape[1]
            ev, vec = np.linalg.eigh(M)
            Ebar.append(np.sqrt(max(ev[-1].real, 1e-300)) * vec[:, -1])
            p_bar.append(float(np.mean(sys.E_abs2[j])))
        F = lam.size
        B = np.zeros((F, 7 * J, nu))
        sq2 = np.sqrt(2.0)
        for j in range(J):
            Ej = Ebar[j]
            exi = xi @ Ej                                   # (F,) complex
            coup = Ej[None, :] - xi * (exi / q_bar)[:, None]  # (F, 3)
            for c in range(3):
                diag = -lam + q_bar                          # (F,)
                re_row = 7 * j + 2 * c
                im_row = re_row + 1
                col = 6 * j + 2 * c
                B[:, re_row, col] = sq2 * diag.real
                B[:, re_row, col + 1] = -sq2 * diag.imag
                B[:, im_row, col] = sq2 * diag.imag
                B[:, im_row, col + 1] = sq2 * diag.real
                for dq_fac, ucol in ((1j * w, 6 * J),
                                     (None if sys.freeze_dn else w * w,
                                      6 * J + 1)):
                    if dq_fac is None:
                        continue
                    cc = dq_fac * coup[:, c]
                    B[:, re_row, ucol] = sq2 * cc.real
                    B[:, im_row, ucol] = sq2 * cc.imag
            drow = 7 * j + 6
            for c in range(3):
                col = 6 * j + 2 * c
                B[:, drow, col] = -lam * 2.0 * sig_bar * Ej[c].real
                B[:, drow, col + 1] = -lam * 2.0 * sig_bar * Ej[c].imag
            B[:, drow, 6 * J] = -lam * p_bar[j]
        # keep only the per-frequency diagonal of the Gram: the frozen
        # cross-coupling phases misrepresent oscillatory backgrounds and a
        # full inverse then rotates the search badly; the diagonal keeps the
        # anisotropic lambda-scaling that matters for conditioning
        gdiag = np.einsum("fru,fru->fu", B, B)
        self.Dinv = 1.0 / (gdiag + eps + 1e-12 * gdiag.mean(axis=1, keepdims=True))
        self._m = m
        self._nu = nu

    def _dst(self, x: np.ndarray) -> np.ndarray:
        return scipy.fft.dstn(x, type=1, norm="ortho").reshape(-1)

    def _idst(self, coeff: np.ndarray) -> np.ndarray:
        return scipy.fft.idstn(coeff.reshape(self._m), type=1, norm="ortho")

    def apply(self, w: Perturbation) -> Perturbation:
        J, nu = self.J, self._nu
        F = self.Dinv.shape[0]
        vec = np.empty((F, nu))
        for j in range(J):
            for c in range(3):
                core = w.dE[j, c][self._core]
                vec[:, 6 * j + 2 * c] = self._dst(core.real)
                vec[:, 6 * j + 2 * c + 1] = self._dst(core.imag)
        vec[:, 6 * J] = self._dst(w.dsigma[self._core])
        if not self.freeze_dn:
            vec[:, 6 * J + 1] = self._dst(w.dn[self._core])
        sol = self.Dinv * vec
        out = Perturbation.zeros(J, self.sys.grid.dims, self.freeze_dn)
        for j in range(J):
            for c in range(3):
                out.dE[j, c][self._core] = (
                    self._idst(sol[:, 6 * j + 2 * c])
                    + 1j * self._idst(sol[:, 6 * j + 2 * c + 1])
                )
        out.dsigma[self._core] = self._idst(sol[:, 6 * J])
        if not self.freeze_dn:
            out.dn[self._core] = self._idst(sol[:, 6 * J + 1])
        return out


@dataclass
class NormalSolveResult:
    w: Perturbation
    iterations: int
    relres: float
    converged: bool


def normal_solve(sys: LinearizedSystem, S: ResidualBlocks,
                 shell: Perturbation | None = None, eps: float | None = None,
                 tol: float = 1e-10, maxiter: int = 4000,
                 precondition: bool = True,
                 raise_on_cap: bool = False) -> NormalSolveResult:
    """Solve the regularized normal equations of the linearized system.

    Minimizes ||A w - S||^2 + eps ||w||^2 over w agreeing with `shell`
    on the two outer node layers (the discrete double-Dirichlet data of
    the fourth-order operator A^T A: boundary value plus first interior
    layer encodes value and normal derivative).  Conjugate gradients on
    the free degrees of freedom; first-order optimality is reported as
    the relative residual of the normal equations.
    """
    g = sys.grid
    free = _free_mask(g)
    if shell is None:
        shell = Perturbation.zeros(sys.J, g.dims, freeze_dn=sys.freeze_dn)
    lift = shell.mask_shell(free)
    if eps is None:
        ats_norm = sys.apply_adjoint(S).norm()
        s_norm = S.norm()
        eps = 1e-8 * ats_norm / s_norm if s_norm > 0 else 1e-8

    # reduce to the free region: (P^T A^T A P + eps) u = P^T A^T (S - A lift)
    a_lift = sys.apply(lift)
    rhs_blocks = ResidualBlocks(mx=S.mx - a_lift.mx,
                                mx_conj=S.mx_conj - a_lift.mx_conj,
                                data=S.data - a_lift.data)
    b = sys.apply_adjoint(rhs_blocks).mask_free(free)

    def N(u: Perturbation) -> Perturbation:
        au = sys.apply(u)
        out = sys.apply_adjoint(au).mask_free(free)
        out.axpy(eps, u)
        return out

    pre = SymbolPreconditioner(sys, eps) if precondition else None

    def M(v: Perturbation) -> Perturbation:
        return pre.apply(v) if pre is not None else v

    x = Perturbation.zeros(sys.J, g.dims, freeze_dn=sys.freeze_dn)
    r = b.copy()
    z = M(r)
    p = z.copy()
    rz = r.dot(z)
    b_norm = b.norm() + 1e-300
    it = 0
    stagnant = 0
    last = np.inf
    converged = False
    relres = 1.0
    for it in range(1, maxiter + 1):
        Np = N(p)
        alpha = rz / max(p.dot(Np), 1e-300)
        x.axpy(alpha, p)
        r.axpy(-alpha, Np)
        relres = r.norm() / b_norm
        if relres < tol:
            converged = True
            break
        if relres > 0.999 * last:
            stagnant += 1
            if stagnant > 50:
                if eps == 0.0:
                    warnings.warn(
                        "unregularized normal iteration stagnated; the "
                        "system likely has a near-null space",
                        IllPosedWarning,
                    )
                break
        else:
            stagnant = 0
        last = min(last, relres)
        z = M(r)
        rz_new = r.dot(z)
        beta = rz_new / max(rz, 1e-300)
        rz = rz_new
        p = Perturbation(z.dE + beta * p.dE,
                         z.dsigma + beta * p.dsigma,
                         None if z.dn is None else z.dn + beta * p.dn)
    if not converged and it >= maxiter and raise_on_cap:
        raise NoConvergence(f"normal solve hit the {maxiter}-iteration cap")
    w = x.mask_free(free)
    w.axpy(1.0, lift)
    return NormalSolveResult(w=w, iterations=it, relres=relres,
                             converged=converged)


# --- Gauss-Newton outer loop -------------------------------------------------


@dataclass
class BoundaryData:
    """Measured boundary data of the full state (fields + coefficients):
    full-size arrays whose two outer node layers supply the Dirichlet value
    and, through the first interior layer, the normal derivative.  In the
    synthetic twin experiments they come from the true state."""

    E: np.ndarray         # (J, 3, *dims) complex
    sigma: np.ndarray     # (*dims)
    n: np.ndarray | None  # (*dims) or None when dn frozen


@dataclass
class GaussNewtonConfig:
    max_iter: int = 10
    reg: float | None = None          # None: scale-aware default per solve
    tol: float = 1e-8                 # relative residual target
    stag_tol: float = 1e-3            # relative decrease considered progress
    cg_tol: float = 1e-8
    cg_maxiter: int = 1500
    armijo: float = 1e-4
    freeze_dn: bool = False
    forward_cfg: SolverConfig | None = None


@dataclass
class ReconstructionResult:
    """Outcome of a linearized or Gauss-Newton reconstruction."""

    medium: Medium
    fields: list
    delta_sigma: np.ndarray
    delta_n: np.ndarray | None
    residual_history: list
    boundary_mismatch: float
    iterations: int
    converged: bool


def _state_residual(medium: Medium, fields, data) -> ResidualBlocks:
    """Nonlinear residual blocks of the all-at-once formulation: the
    elliptic Maxwell residual of each field and lap(sigma |E_j|^2 - H_j)."""
    from .forward import apply_elliptic_form

    g = medium.grid
    h = g.spacing
    interior = g.interior_mask(1)
    J = len(fields)
    mx = np.empty((J, 3, *g.dims), dtype=complex)
    dat = np.empty((J, *g.dims))
    for j in range(J):
        mx[j] = apply_elliptic_form(medium, fields[j]).values
        hj = internal_data(medium.sigma, fields[j]).H
        dat[j] = lap7(hj - data[j].H, h) * interior
    return ResidualBlocks(mx=mx, mx_conj=np.conj(mx), data=dat)


def _shell_mismatch(current_E, current_sig, current_n, bdry: BoundaryData,
                    free: np.ndarray) -> Perturbation:
    shell = Perturbation(
        dE=bdry.E - current_E,
        dsigma=bdry.sigma - current_sig,
        dn=None if bdry.n is None else bdry.n - current_n,
    )
    return shell.mask_shell(free)


def gauss_newton(data, init: Medium, illum, cfg: GaussNewtonConfig,
                 boundary: BoundaryData) -> ReconstructionResult:
    """All-at-once Gauss-Newton for the normal-operator formulation.

    State v = ({E_j}, sigma, n).  Each step solves the linearized normal
    equations about the current state with boundary shells taken from the
    measured (here: true-state) traces, then backtracks on the residual
    norm; sigma >= 0 and n >= floor are enforced by projection after every
    accepted step.  Raises Divergence after three consecutive steps in
    which even the damped update grows the residual.
    """
    fcfg = cfg.forward_cfg or SolverConfig()
    fields = [solve_forward(init, f, fcfg) for f in illum]
    sigma = init.sigma.copy()
    n_field = init.n.copy()
    medium = Medium(grid=init.grid, n=n_field, sigma=sigma, omega=init.omega,
                    n_floor=init.n_floor)
    free = _free_mask(init.grid)

    res = _state_residual(medium, fields, data)
    history = [res.norm()]
    scale0 = history[0]
    bad_steps = 0
    it = 0
    converged = scale0 == 0.0
    for it in range(1, cfg.max_iter + 1):
        if history[-1] <= cfg.tol * max(scale0, 1e-300):
            converged = True
            it -= 1
            break
        sys = LinearizedSystem(medium=medium, fields=fields,
                               freeze_dn=cfg.freeze_dn)
        S = ResidualBlocks(mx=-res.mx, mx_conj=-res.mx_conj, data=-res.data)
        E_cur = np.stack([F.values for F in fields])
        shell = _shell_mismatch(E_cur, medium.sigma, medium.n, boundary, free)
        ns = normal_solve(sys, S, shell=shell, eps=cfg.reg, tol=cfg.cg_tol,
                          maxiter=cfg.cg_maxiter)
        w = ns.w

        accepted = False
        t = 1.0
        for _ in range(8):
            E_new = E_cur + t * w.dE
            sig_new = np.clip(medium.sigma + t * w.dsigma, 0.0, None)
            n_new = medium.n.copy() if w.dn is None else np.clip(
                medium.n + t * w.dn, init.n_floor, None
            )
            med_new = Medium(grid=init.grid, n=n_new, sigma=sig_new,
                             omega=init.omega, n_floor=init.n_floor)
            flds_new = [VectorField(grid=init.grid, values=E_new[j])
                        for j in range(len(fields))]
            res_new = _state_residual(med_new, flds_new, data)
            if res_new.norm() <= (1.0 - cfg.armijo * t) * history[-1]:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            bad_steps += 1
            if bad_steps >= 3:
                raise Divergence(
                    "residual grew for 3 consecutive damped Gauss-Newton steps"
                )
            # take the smallest damped step anyway and keep watching
        else:
            bad_steps = 0
        medium = med_new
        fields = flds_new
        res = res_new
        history.append(res.norm())
        if len(history) >= 3 and history[-2] > 0:
            if (history[-2] - history[-1]) < cfg.stag_tol * history[-2] and accepted:
                converged = history[-1] <= cfg.tol * max(scale0, 1e-300) or converged
                break
    if history[-1] <= cfg.tol * max(scale0, 1e-300):
        converged = True

    bnd = _shell_mismatch(np.stack([F.values for F in fields]), medium.sigma,
                          medium.n, boundary, free).norm()
    return ReconstructionResult(
        medium=medium,
        fields=fields,
        delta_sigma=medium.sigma - init.sigma,
        delta_n=None if cfg.freeze_dn else medium.n - init.n,
        residual_history=history,
        boundary_mismatch=float(bnd),
        iterations=it,
        converged=converged,
    )


# --- stability report ---------------------------------------------------------


def _sobolev_norm(grid: Grid, f: np.ndarray, order: float) -> float:
    """Spectral H^s surrogate: zero-pad to the doubled periodic box and
    weight by <xi>^order."""
    dims2 = tuple(2 * d for d in grid.dims)
    pad = np.zeros(dims2, dtype=complex)
    pad[tuple(slice(0, d) for d in grid.dims)] = f
    fh = np.fft.fftn(pad)
    w = 1.0
    for a in range(3):
        xi = 2.0 * np.pi * np.fft.fftfreq(dims2[a], d=grid.spacing)
        shape = [1, 1, 1]
        shape[a] = dims2[a]
        w = w * (1.0 + xi.reshape(shape) ** 2)
    nrm2 = np.sum((w ** order) * np.abs(fh) ** 2) / np.prod(dims2)
    return float(np.sqrt(nrm2.real * grid.spacing**3))


def _boundary_norm(grid: Grid, f: np.ndarray, order: float) -> float:
    """H^s(boundary) surrogate: 2D spectral weights per face, summed."""
    total = 0.0
    for axis in range(3):
        for side in (0, 1):
            idx = [slice(None)] * f.ndim
            idx[f.ndim - 3 + axis] = -1 if side else 0
            face = np.asarray(f[tuple(idx)], dtype=complex)
            fh = np.fft.fftn(face, axes=(-2, -1))
            dims = face.shape[-2:]
            w = 1.0
            for a in range(2):
                xi = 2.0 * np.pi * np.fft.fftfreq(dims[a], d=grid.spacing)
                shape = [1, 1]
                shape[a] = dims[a]
                w = w * (1.0 + xi.reshape(shape) ** 2)
            total += float(
                np.sum((w ** order) * np.abs(fh) ** 2).real
                / np.prod(dims) * grid.spacing**2
            )
    return float(np.sqrt(total))


def stability_report(grid: Grid, w_pair, dH_pair, trace_pair,
                     orders=(0, 1, 2)) -> dict:
    """Norm surrogates of the two-sided stability estimate.

    For each Sobolev order s, reports the left side ||w1 - w2||_{H^s}
    (summed over unknown blocks), the right-side pieces ||dH1 - dH2||_{H^s}
    and the boundary-trace mismatch in H^{s-1/2}, plus their ratio: an
    empirical stand-in for the stability constant.  No claim is made about
    the continuum constants.
    """
    w1, w2 = w_pair
    dH1, dH2 = dH_pair
    t1, t2 = trace_pair
    out = {"orders": list(orders), "left": [], "right_data": [],
           "right_trace": [], "ratio": []}
    for s in orders:
        left = 0.0
        for j in range(w1.dE.shape[0]):
            for c in range(3):
                left += _sobolev_norm(grid, w1.dE[j, c] - w2.dE[j, c], s) ** 2
        left += _sobolev_norm(grid, w1.dsigma - w2.dsigma, s) ** 2
        if w1.dn is not None and w2.dn is not None:
            left += _sobolev_norm(grid, w1.dn - w2.dn, s) ** 2
        left = float(np.sqrt(left))
        rd = 0.0
        for j in range(dH1.shape[0]):
            rd += _sobolev_norm(grid, dH1[j] - dH2[j], s) ** 2
        rd = float(np.sqrt(rd))
        rt = 0.0
        diff = t1.dE - t2.dE
        for j in range(diff.shape[0]):
            for c in range(3):
                rt += _boundary_norm(grid, diff[j, c], s - 0.5) ** 2
        rt += _boundary_norm(grid, t1.dsigma - t2.dsigma, s - 0.5) ** 2
        if t1.dn is not None and t2.dn is not None:
            rt += _boundary_norm(grid, t1.dn - t2.dn, s - 0.5) ** 2
        rt = float(np.sqrt(rt))
        right = rd + rt
        out["left"].append(left)
        out["right_data"].append(rd)
        out["right_trace"].append(rt)
        out["ratio"].append(left / right if right > 0 else 0.0)
    return out


def smallest_singular_estimate(sys: LinearizedSystem, probes: int = 2,
                               iters: int = 80, seed: int = 0) -> float:
    """Crude Lanczos estimate of the smallest singular value of the free-dof
    normal operator (the injectivity constant is not certified by theory,
    only measured)."""
    rng = np.random.default_rng(seed)
    g = sys.grid
    free = _free_mask(g)
    best = np.inf
    for _ in range(probes):
        v = Perturbation(
            dE=(rng.normal(size=(sys.J, 3, *g.dims))
                + 1j * rng.normal(size=(sys.J, 3, *g.dims))),
            dsigma=rng.normal(size=g.dims),
            dn=None if sys.freeze_dn else rng.normal(size=g.dims),
        ).mask_free(free)
        v = v.scaled(1.0 / v.norm())
        alphas, betas = [], []
        v_prev = Perturbation.zeros(sys.J, g.dims, sys.freeze_dn)
        beta = 0.0
        for _ in range(iters):
            w = sys.apply_adjoint(sys.apply(v)).mask_free(free)
            alpha = v.dot(w)
            w.axpy(-alpha, v)
            w.axpy(-beta, v_prev)
            alphas.append(alpha)
            beta = w.norm()
            betas.append(beta)
            if beta < 1e-14:
                break
            v_prev = v
            v = w.scaled(1.0 / beta)
        T = np.diag(alphas) + np.diag(betas[:-1], 1) + np.diag(betas[:-1], -1)
        ev = np.linalg.eigvalsh(T)
        best = min(best, float(np.sqrt(max(ev.min(), 0.0))))
    return best
