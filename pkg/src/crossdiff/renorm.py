"""Truncation family, defect estimates, renormalized residuals and entropy audits.

The base cutoff is the smooth transition

    phi(x) = s(1 - x) / (s(1 - x) + s(x)),   s(y) = exp(-1/y) for y > 0, else 0,

equal to 1 for ``x <= 0`` and 0 for ``x >= 1``.  It is evaluated as
``expit(1/x - 1/(1-x))`` on ``(0, 1)`` so both plateaus are exact.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import grid as G
from .grid import Grid
from .hypotheses import CLASS_H5_DP_A0, CLASS_H5_DP_AII, CLASS_H5_PRIME, classify_hypotheses
from .model import SystemSpec, entropy_density, reaction_eval
from .scheme import Discretization, SchemeParams, Trajectory, march


class TruncationInactiveWarning(UserWarning):
    """The declared support of a test function reaches beyond the sampled densities."""


# ----------------------------------------------------------------------------
# Base cutoff
# ----------------------------------------------------------------------------


def base_cutoff(x, order: int = 0) -> np.ndarray:
    """Base cutoff (``order=0``) or its first or second derivative."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    if order == 0:
        out[x <= 0] = 1.0
    inside = (x > 0) & (x < 1)
    if not np.any(inside):
        return out
    xi = x[inside]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        g = 1.0 / (1.0 - xi) - 1.0 / xi
        p = expit(-g)
        q = p * expit(g)  # p (1 - p) without cancellation
        if order == 0:
            val = p
        else:
            g1 = 1.0 / (1.0 - xi) ** 2 + 1.0 / xi**2
            d1 = np.where(q > 0, -q * g1, 0.0)
            if order == 1:
                val = d1
            elif order == 2:
                g2 = 2.0 / (1.0 - xi) ** 3 - 2.0 / xi**3
                val = np.where(q > 0, -d1 * (1.0 - 2.0 * p) * g1 - q * g2, 0.0)
            else:
                raise ValueError("order must be 0, 1 or 2")
    out[inside] = val
    return out


@lru_cache(maxsize=None)
def cutoff_bounds() -> tuple[float, float]:
    """``(max|phi'|, max|phi''|)`` from a dense sampling of ``(0, 1)``, padded by 1e-6."""
    x = np.linspace(0.0, 1.0, 400_001)[1:-1]
    return (float(np.max(np.abs(base_cutoff(x, 1)))) * (1 + 1e-6),
            float(np.max(np.abs(base_cutoff(x, 2)))) * (1 + 1e-6))


# ----------------------------------------------------------------------------
# Truncation family
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationFamily:
    """``phi_i^L(v) = v_i phi(s) + 2L (1 - phi(s))`` with ``s = sum(v)/L - 1``.

    ``L`` may be any positive real; the integer levels are the usual case.
    """

    L: float
    n: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"truncation level must be positive, got {self.L}")
        if self.n < 1:
            raise ValueError("species count must be positive")

    def _s(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise ValueError(f"expected {self.n} species on axis 0, got shape {v.shape}")
        return v, v.sum(axis=0) / self.L - 1.0

    @property
    def K1(self) -> float:
        """Analytic bound on ``|d_j phi_i^L|``."""
        return 1.0 + 2.0 * cutoff_bounds()[0]

    @property
    def hessian_constant(self) -> float:
        """``C`` with ``sup|d_j d_k phi_i^L| <= C / L``."""
        d1, d2 = cutoff_bounds()
        return 2.0 * d1 + 2.0 * d2

    @property
    def K2(self) -> float:
        """Analytic bound for the weighted Hessian law at this level."""
        return self.hessian_constant * (1.0 / self.L + 4.0)


def phi_value(fam: TruncationFamily, v) -> np.ndarray:
    v, s = fam._s(v)
    p = base_cutoff(s)
    return v * p + 2.0 * fam.L * (1.0 - p)


def phi_grad(fam: TruncationFamily, v) -> np.ndarray:
    """``out[i, j] = d phi_i / d v_j``."""
    v, s = fam._s(v)
    p, d1 = base_cutoff(s), base_cutoff(s, 1)
    eye = np.eye(fam.n).reshape((fam.n, fam.n) + (1,) * (v.ndim - 1))
    return eye * p + (v / fam.L - 2.0)[:, None] * d1


def phi_hessian(fam: TruncationFamily, v) -> np.ndarray:
    """``out[i, j, k] = d^2 phi_i / d v_j d v_k``."""
    v, s = fam._s(v)
    n, L = fam.n, fam.L
    d1, d2 = base_cutoff(s, 1), base_cutoff(s, 2)
    eye = np.eye(n).reshape((n, n) + (1,) * (v.ndim - 1))
    out = (eye[:, :, None] + eye[:, None, :]) * (d1 / L)
    return out + (v / L - 2.0)[:, None, None] * (d2 / L)


# ----------------------------------------------------------------------------
# Law checks
# ----------------------------------------------------------------------------


@dataclass
class LawViolation:
    law: str
    L: float
    v: np.ndarray
    detail: str


@dataclass
class LawReport:
    n: int
    levels: list[float]
    count: int
    violations: list[LawViolation]
    K1_empirical: float
    K1_bound: float
    K2_empirical: float
    hessian_sup: list[float]
    hessian_C: float
    hessian_fit_ratio: tuple[float, float]

    @property
    def ok(self) -> bool:
        return not self.violations and 0.5 <= self.hessian_fit_ratio[0] and self.hessian_fit_ratio[1] <= 2.0

    def counts(self) -> dict[str, int]:
        out = {f"L{i}": 0 for i in range(1, 9)}
        for viol in self.violations:
            out[viol.law] += 1
        return out


def default_sampler(rng: np.random.Generator, n: int, L: float, count: int) -> np.ndarray:
    """Points with total density spread over ``[0, 3L]`` (transition band oversampled)."""
    total = np.concatenate([
        rng.uniform(0.0, 3.0 * L, count - count // 2),
        rng.uniform(L, 2.0 * L, count // 2),
    ])
    shares = rng.dirichlet(np.full(n, 0.7), size=count).T
    v = shares * total
    v[:, : min(count, 4)] = 0.0  # the origin and nearby faces
    if count > 4:
        v[0, 1:4] = [0.5 * L, L, 2.0 * L]
    return v


def check_truncation_laws(levels: Sequence[float], n: int, count: int = 10_000, seed: int = 0,
                          sampler: Callable = default_sampler, rtol: float = 1e-12) -> LawReport:
    rng = np.random.default_rng(seed)
    levels = [float(L) for L in levels]
    viols: list[LawViolation] = []
    eye = np.eye(n)[:, :, None]
    k1 = k2 = 0.0
    sups = []

    def flag(law, L, mask, v, detail):
        idx = np.flatnonzero(mask)
        if idx.size:
            viols.append(LawViolation(law, L, v[:, idx[0]].copy(), f"{detail} ({idx.size} samples)"))

    for L in levels:
        fam = TruncationFamily(L, n)
        v = sampler(rng, n, L, count)
        tot = v.sum(axis=0)
        val = phi_value(fam, v)
        grad = phi_grad(fam, v)
        hess = phi_hessian(fam, v)
        scale = 1.0 + tot
        flag("L1", L, np.any((val < -rtol * scale) | (val > v + 2 * tot + rtol * scale), axis=0), v,
             "0 <= phi_i <= v_i + 2 sum v")
        below = tot < L
        flag("L2", L, below & (np.any(val != v, axis=0) | np.any(grad != eye, axis=(0, 1))), v,
             "phi_i = v_i below L")
        above = tot > 2 * L
        flag("L3", L, above & (np.any(grad != 0, axis=(0, 1)) | np.any(hess != 0, axis=(0, 1, 2))), v,
             "derivatives vanish beyond 2L")
        absg = np.abs(grad)
        k1 = max(k1, float(absg.max()))
        flag("L5", L, np.any(absg > fam.K1, axis=(0, 1)), v, f"|d phi| <= K1={fam.K1:.6g}")
        absh = np.abs(hess)
        sups.append(float(absh.max()))
        weight = (1.0 + v.max(axis=0)) * absh.max(axis=(0, 1, 2))
        with np.errstate(invalid="ignore"):  # negative samples are reported under L1
            cross = np.sqrt(v[None, :, None] * v[None, None, :]) * absh  # sqrt(v_j v_k) |H_ijk|
        l7 = weight + cross.max(axis=(0, 1, 2))
        k2 = max(k2, float(l7.max()))
        flag("L7", L, l7 > fam.K2 * (1 + rtol), v, f"weighted Hessian <= K2={fam.K2:.6g}")
        L0 = rng.uniform(0.0, L, count)
        flag("L8", L, (tot >= L0) & (val.sum(axis=0) < L0 * (1 - rtol)), v, "sum phi >= L0")

    # L4: limit of the gradient along the ladder at fixed points
    top = max(levels)
    fixed = default_sampler(rng, n, top / 4.0, count)
    dev = [np.abs(phi_grad(TruncationFamily(L, n), fixed) - eye).max(axis=(0, 1)) for L in sorted(levels)]
    flag("L4", top, dev[-1] != 0, fixed, "d_j phi_i -> delta_ij along the ladder")

    # L6: sup of the Hessian decreases toward zero, fitted as C/L
    order = np.argsort(levels)
    ls = np.array(levels)[order]
    ss = np.array(sups)[order]
    for a, b, La in zip(ss[:-1], ss[1:], ls[:-1]):
        if b > a:
            viols.append(LawViolation("L6", float(La), np.zeros(n), f"Hessian sup increased {a:.3e} -> {b:.3e}"))
    C = float(np.exp(np.mean(np.log(ss * ls)))) if np.all(ss > 0) else 0.0
    ratios = ss * ls / C if C > 0 else np.array([0.0])
    return LawReport(n, levels, count, viols, k1, 1.0 + 2.0 * cutoff_bounds()[0], k2, sups, C,
                     (float(ratios.min()), float(ratios.max())))


# ----------------------------------------------------------------------------
# Entropy audit
# ----------------------------------------------------------------------------


@dataclass
class AuditReport:
    classification: str
    eta: float
    times: np.ndarray
    entropy: np.ndarray
    mass: np.ndarray  # (steps + 1, n)
    prod_l2: np.ndarray  # (steps, n)
    prod_sqrt: np.ndarray
    prod_cross: np.ndarray  # (steps, n, n)
    production: np.ndarray  # cumulative production term of the budget, (steps + 1,)
    budget: np.ndarray  # H^k + production_k - H^0
    budget_rate: float  # fitted C with budget_k <= C t_k
    mass_bound_ok: np.ndarray  # entropy controls the weighted mass
    decay_violations: list[int]
    tolerance: float

    @property
    def nonincreasing(self) -> bool:
        return not self.decay_violations


def entropy_audit(traj: Trajectory, hypotheses=None, seed: int = 0) -> AuditReport:
    """Entropy, production norms and the cumulative entropy budget of a run.

    The budget uses the ``|grad u|^2`` production when the system is in
    the weak cross-diffusion class or has positive self-diffusion, and the
    square-root and cross terms when only linear diffusion is available.
    """
    spec, grid, params = traj.spec, traj.grid, traj.params
    hyp = hypotheses if hypotheses is not None else classify_hypotheses(spec, seed=seed, count=2000)
    cls = hyp.classification
    eta = float(hyp.eta_empirical) if np.isfinite(hyp.eta_empirical) and hyp.eta_empirical > 0 else 0.0
    steps = len(traj.reports)
    ent = spec.entropy
    H = np.array([float(G.integrate(grid, entropy_density(ent, u))) for u in traj.fields])
    mass = np.array([G.integrate(grid, u) for u in traj.fields])
    n = spec.n
    l2 = np.array([r.prod_l2 for r in traj.reports]).reshape(steps, n)
    sq = np.array([r.prod_sqrt for r in traj.reports]).reshape(steps, n)
    cr = np.array([r.prod_cross for r in traj.reports]).reshape(steps, n, n)
    tau = params.tau
    if cls in (CLASS_H5_PRIME, CLASS_H5_DP_AII):
        per_step = eta * l2.sum(axis=1)
    elif cls == CLASS_H5_DP_A0:
        off = cr.sum(axis=(1, 2)) - np.trace(cr, axis1=1, axis2=2)
        per_step = eta * (sq.sum(axis=1) + off)
    else:
        per_step = np.zeros(steps)
    production = np.concatenate([[0.0], np.cumsum(tau * per_step)])
    budget = H + production - H[0]
    t = np.asarray(traj.times)
    rate = float(max(0.0, np.max(budget[1:] / t[1:]))) if steps else 0.0
    bound = H + (math.e - 1.0) * grid.volume * float(np.sum(ent.pi * np.exp(-ent.lam)))
    mass_ok = mass @ ent.pi <= bound * (1 + 1e-12)
    tol = 10.0 * params.newton.tol
    viol = []
    if spec.drift.kind == "zero":
        viol = [k for k in range(1, steps + 1) if H[k] - H[k - 1] > tol * max(1.0, abs(H[k - 1]))]
    return AuditReport(cls, eta, t, H, mass, l2, sq, cr, production, budget, rate, mass_ok, viol, tol)


# ----------------------------------------------------------------------------
# Defect estimate
# ----------------------------------------------------------------------------


@dataclass
class DefectEstimate:
    L: float
    totals: np.ndarray  # per species, >= 0
    per_step: np.ndarray  # (steps, n)


def _face_fluxes(traj: Trajectory):
    disc = Discretization(traj.spec, traj.grid, traj.params)
    tau = traj.params.tau
    out = []
    for k in range(1, len(traj.fields)):
        u = traj.fields[k]
        st = disc._state(disc.to_entropy(u), disc.drift((k - 1) * tau, k * tau))
        out.append((st.uf, st.flux, st.gu))
    return out


def defect_estimate(traj: Trajectory, fam: TruncationFamily, _fluxes=None) -> DefectEstimate:
    """Space-time total variation of the quadratic-gradient term of the truncation.

    Per species ``i`` this is ``sum_k tau sum_faces W |sum_{j,k} H^i_jk F_j . grad u_k|``
    with ``F`` the face flux of the scheme (drift included) and the
    Hessian evaluated at the face average.
    """
    if fam.n != traj.spec.n:
        raise ValueError("truncation family and system differ in species count")
    fluxes = _fluxes if _fluxes is not None else _face_fluxes(traj)
    W = traj.grid.face_weights
    tau = traj.params.tau
    per = np.zeros((len(fluxes), fam.n))
    for s, (uf, F, gu) in enumerate(fluxes):
        if float(uf.sum(axis=0).max()) <= fam.L:
            continue
        H = phi_hessian(fam, uf)
        integrand = np.einsum("ijkF,jF,kF->iF", H, F, gu)
        per[s] = tau * np.abs(integrand) @ W
    return DefectEstimate(fam.L, per.sum(axis=0), per)


def defect_ladder(traj: Trajectory, levels: Sequence[float]) -> list[DefectEstimate]:
    fluxes = _face_fluxes(traj)
    return [defect_estimate(traj, TruncationFamily(L, traj.spec.n), fluxes) for L in levels]


def defect_trend(estimates: Sequence[DefectEstimate], rel: float = 0.05) -> list[tuple[int, float, float]]:
    """Pairs ``(species, L)`` where the total grows by more than ``rel`` along the ladder."""
    bad = []
    for a, b in zip(estimates[:-1], estimates[1:]):
        for i, (x, y) in enumerate(zip(a.totals, b.totals)):
            if y > x * (1 + rel) and y > 0:
                bad.append((i, b.L, y / x if x > 0 else float("inf")))
    return bad


# ----------------------------------------------------------------------------
# Renormalized residual
# ----------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def _clamp_profile(s, c: float, width: float, order: int) -> np.ndarray:
    """Smoothed clamp ``psi(s) = int_0^s phi((r - c)/width) dr`` and its derivatives."""
    s = np.asarray(s, dtype=float)
    x = (s - c) / width
    if order == 1:
        return base_cutoff(x)
    if order == 2:
        return base_cutoff(x, 1) / width
    # psi(s) = min(s, c) + width * int_0^{clip(x,0,1)} phi
    y = np.clip(x, 0.0, 1.0)
    nodes = 0.5 * (_GL_NODES[:, None] + 1.0) * y.ravel()[None, :]
    integral = 0.5 * y.ravel() * (_GL_WEIGHTS @ base_cutoff(nodes))
    return np.minimum(s, c) + width * integral.reshape(s.shape)


@dataclass(frozen=True)
class XiFunction:
    """Scalar function of the density vector with compactly supported gradient.

    kind: ``"coord"`` (smoothed clamp of ``u_index``), ``"sum"`` (smoothed
    clamp of the total density) or ``"const"``.  The gradient vanishes
    once the clamped quantity exceeds ``c + width``.
    """

    kind: str
    c: float = 1.0
    width: float = 1.0
    index: int = 0
    shift: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("coord", "sum", "const"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind != "const" and not (self.c > 0 and self.width > 0):
            raise ValueError("clamp level and width must be positive")

    @property
    def ident(self) -> str:
        return self.name or (f"{self.kind}{self.index + 1}" if self.kind == "coord" else self.kind)

    @property
    def support(self) -> float:
        """Upper end of the support of the gradient in the clamped variable."""
        return 0.0 if self.kind == "const" else self.c + self.width

    def _arg(self, u):
        return u[self.index] if self.kind == "coord" else u.sum(axis=0)

    def value(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "const":
            return np.full(u.shape[1:], self.shift)
        return _clamp_profile(self._arg(u), self.c, self.width, 0) + self.shift

    def grad(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        n = u.shape[0]
        out = np.zeros_like(u)
        if self.kind == "coord":
            out[self.index] = _clamp_profile(u[self.index], self.c, self.width, 1)
        elif self.kind == "sum":
            out[:] = _clamp_profile(u.sum(axis=0), self.c, self.width, 1)
        return out

    def hessian(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        n = u.shape[0]
        out = np.zeros((n, n) + u.shape[1:])
        if self.kind == "coord":
            out[self.index, self.index] = _clamp_profile(u[self.index], self.c, self.width, 2)
        elif self.kind == "sum":
            out[:] = _clamp_profile(u.sum(axis=0), self.c, self.width, 2)
        return out


@dataclass(frozen=True)
class BumpTest:
    """Space-time test function ``exp(-|x - center|^2 / width^2) (1 + cos(pi t/T)) / 2``.

    It vanishes at ``t = T`` together with its time derivative.
    """

    center: tuple[float, ...]
    width: float
    t_end: float
    name: str = "bump"

    def _space(self, x):
        r2 = np.sum((np.asarray(x) - np.asarray(self.center)) ** 2, axis=1)
        return np.exp(-r2 / self.width**2)

    def time_factor(self, t: float) -> float:
        return 0.5 * (1.0 + math.cos(math.pi * t / self.t_end)) if t < self.t_end else 0.0

    def value(self, x, t: float) -> np.ndarray:
        return self._space(x) * self.time_factor(t)

    def grad(self, x, t: float) -> np.ndarray:
        x = np.asarray(x)
        return (-2.0 * (x - np.asarray(self.center)) / self.width**2) * self.value(x, t)[:, None]


@dataclass(frozen=True)
class RenormTestFunction:
    xi: XiFunction
    phi: BumpTest


@dataclass
class RenormResidual:
    xi_id: str
    phi_id: str
    residual: float  # |LHS - RHS| / normalizer
    raw: float  # |LHS - RHS|
    normalizer: float
    terms: dict


def renorm_residual(traj: Trajectory, tf: RenormTestFunction) -> RenormResidual:
    """Discrete residual of the renormalized weak formulation on a trajectory.

    Time integrals use the piecewise-constant interpolant ``u^k`` on
    ``((k-1) tau, k tau]``: the ``d_t phi`` term is integrated exactly and the
    remaining terms take ``phi`` at the left endpoint.  Space integrals use
    the lumped nodal mass and the face weights of the grid.
    """
    xi, bump = tf.xi, tf.phi
    spec, grid, params = traj.spec, traj.grid, traj.params
    if xi.kind != "const":
        top = max(float(np.max(xi._arg(u))) for u in traj.fields)
        if xi.support > top:
            warnings.warn(f"support of xi' ends at {xi.support:.6g}, beyond the sampled maximum {top:.6g}",
                          TruncationInactiveWarning, stacklevel=2)
    if not math.isclose(bump.t_end, params.t_end):
        raise ValueError("test function must vanish at the final time of the trajectory")
    tau = params.tau
    x, xf, axis = grid.coords, grid.face_coords, grid.face_axis
    M = grid.mass
    W = grid.face_weights
    disc = Discretization(spec, grid, params)

    # left side
    times = np.asarray(traj.times)
    phi_t = np.array([bump.time_factor(t) for t in times])
    space_nodes = bump._space(x)
    lhs_time = 0.0
    for k in range(1, len(traj.fields)):
        lhs_time -= float(np.sum(M * xi.value(traj.fields[k]) * space_nodes)) * (phi_t[k] - phi_t[k - 1])
    lhs_init = -float(np.sum(M * xi.value(traj.fields[0]) * space_nodes)) * phi_t[0]

    rhs_quad = rhs_flux = rhs_reac = 0.0
    for k in range(1, len(traj.fields)):
        t_left = times[k - 1]
        u = traj.fields[k]
        st = disc._state(disc.to_entropy(u), disc.drift(t_left, t_left + tau))
        phi_face = bump.value(xf, t_left)
        gphi = np.take_along_axis(bump.grad(xf, t_left), axis[:, None], axis=1)[:, 0]
        Hxi = xi.hessian(st.uf)
        rhs_quad -= tau * float(np.einsum("ikF,iF,kF,F->", Hxi, st.flux, st.gu, W * phi_face))
        rhs_flux -= tau * float(np.einsum("iF,iF,F->", xi.grad(st.uf), st.flux, W * gphi))
        if spec.reaction.kind != "zero":
            f = reaction_eval(spec.reaction, u)
            if params.delta > 0:
                f = f / (1.0 + params.delta * np.sqrt(np.sum(f**2, axis=0)))
            rhs_reac += tau * float(np.sum(xi.grad(u) * f * (M * bump.value(x, t_left))))
    terms = dict(lhs_time=lhs_time, lhs_init=lhs_init, rhs_quadratic=rhs_quad, rhs_flux=rhs_flux,
                 rhs_reaction=rhs_reac)
    raw = abs(lhs_time + lhs_init - rhs_quad - rhs_flux - rhs_reac)
    norm = max(abs(v) for v in terms.values())
    return RenormResidual(xi.ident, bump.name, raw / norm if norm > 0 else 0.0, raw, norm, terms)


def default_xi_suite(n: int, top: float) -> list[XiFunction]:
    """Coordinate and sum clamps whose transition sits inside ``[0, top]``."""
    c, wdt = 0.5 * top, 0.5 * top
    suite = [XiFunction("coord", c / n, wdt / n, index=i) for i in range(n)]
    suite.append(XiFunction("sum", c, wdt))
    return suite


# ----------------------------------------------------------------------------
# Bundle
# ----------------------------------------------------------------------------


@dataclass
class RenormAuditBundle:
    trajectory: Trajectory
    defects: list[DefectEstimate]
    residuals: list[RenormResidual]
    trend_violations: list
    delta: float
    extra: dict = field(default_factory=dict)


def renorm_audit(spec: SystemSpec, grid: Grid, u0, params: SchemeParams, levels: Sequence[float],
                 suite: Sequence[RenormTestFunction] = ()) -> RenormAuditBundle:
    traj = march(spec, grid, u0, params)
    defects = defect_ladder(traj, sorted(levels))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationInactiveWarning)
        residuals = [renorm_residual(traj, tf) for tf in suite]
    return RenormAuditBundle(traj, defects, residuals, defect_trend(defects), params.delta)
