"""Regularized implicit Euler in entropy variables, solved by damped Newton.

One step finds nodal entropy variables ``w`` with

    R(w) = (u(w) - u_prev)/tau - div F(w) + eps ((-Delta)^m w + w) - f_delta(u(w)) = 0

where ``u(w) = exp(w/pi - lambda)`` and the face flux is

    F_i = a_i0 grad u_i + sum_j B1_ij(u_face) grad w_j - u_i b_i .

``B1`` is the density-quadratic part of the Onsager matrix evaluated at the
arithmetic face average.  The linear self-diffusion part is discretised as
``a_i0 grad u_i`` directly: it equals ``a_i0 (u_i/pi_i) grad w_i`` with the
logarithmic face mean, so pure linear diffusion reduces to the standard
three-point scheme while both parts of the discrete entropy production stay
nonnegative.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as G
from .grid import Field, Grid
from .model import (
    DriftSpec,
    EntropyParams,
    SystemSpec,
    entropy_density,
    entropy_gradient,
    entropy_to_primal,
    onsager_quadratic_derivative,
    onsager_split,
    reaction_eval,
    reaction_jacobian,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NonFiniteError(SolverError):
    """Overflow or NaN while evaluating the residual."""

    def __init__(self, message: str, node: int | None = None, species: int | None = None):
        super().__init__(message)
        self.node = node
        self.species = species


class NonConvergence(SolverError):
    """Newton failed; the caller may retry with a smaller step.

    ``trace`` holds the residual max-norms of the iterations and
    ``trajectory`` (set by :func:`march`) the steps completed so far.
    """

    def __init__(self, message: str, trace: Sequence[float] = (), step: int | None = None):
        super().__init__(message)
        self.trace = list(trace)
        self.step = step
        self.trajectory: Trajectory | None = None


@dataclass(frozen=True)
class NewtonControls:
    tol: float = 1e-10
    max_iter: int = 50
    backtrack: float = 0.5
    min_step: float = 1e-8
    max_update: float = 10.0
    relax_sweeps: int = 50
    relax_omega: float = 0.5
    max_fallbacks: int = 2

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.max_iter < 0 or not self.min_step > 0:
            raise ValueError("invalid Newton iteration limits")


@dataclass(frozen=True)
class SchemeParams:
    tau: float
    t_end: float
    eps: float = 0.0
    delta: float = 0.0
    m: int | None = None
    newton: NewtonControls = field(default_factory=NewtonControls)
    eps_cut: float | None = None
    max_halvings: int = 2
    peclet_threshold: float = 2.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"time step must be positive, got {self.tau}")
        if self.eps < 0 or self.delta < 0:
            raise ValueError("regularization parameters eps, delta must be nonnegative")
        if self.t_end < 0:
            raise ValueError("final time must be nonnegative")
        if self.m is not None and self.m not in (1, 2):
            raise ValueError(f"regularization order must be 1 or 2, got {self.m}")
        n = self.t_end / self.tau
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"t_end={self.t_end} is not an integer multiple of tau={self.tau}")

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.tau))

    def order(self, grid: Grid) -> int:
        return self.m if self.m is not None else (1 if grid.dim == 1 else 2)

    def replace(self, **kw) -> "SchemeParams":
        return replace(self, **kw)


# ----------------------------------------------------------------------------
# Small pieces
# ----------------------------------------------------------------------------


def default_eps_cut(entropy: EntropyParams) -> float:
    return min(1e-10, 0.5 * min(1.0, float(np.min(np.exp(-entropy.lam)))))


def initial_cutoff(u0, eps_cut: float, entropy: EntropyParams | None = None) -> np.ndarray:
    """Clamp nodal densities to ``[eps_cut, 1/eps_cut]``."""
    limit = 1.0 if entropy is None else min(1.0, float(np.min(np.exp(-entropy.lam))))
    if not 0 < eps_cut < limit:
        raise ValueError(f"cut-off level must lie in (0, {limit:.6g}), got {eps_cut}")
    values = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    if np.any(values < 0):
        raise ValueError("initial densities must be nonnegative")
    return np.clip(values, eps_cut, 1.0 / eps_cut)


def regularize_reaction(f, delta: float) -> np.ndarray:
    """``f / (1 + delta |f|)`` with the Euclidean norm over species (axis 0)."""
    f = np.asarray(f, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0:
        return f.copy()
    return f / (1.0 + delta * np.sqrt(np.sum(f**2, axis=0)))


def _regularized_reaction_and_jac(spec: SystemSpec, u: np.ndarray, delta: float):
    f = reaction_eval(spec.reaction, u)
    if spec.reaction.kind == "zero":
        return f, None
    Jf = reaction_jacobian(spec.reaction, u)
    if delta == 0:
        return f, Jf
    nrm = np.sqrt(np.sum(f**2, axis=0))
    g = 1.0 + delta * nrm
    with np.errstate(invalid="ignore", divide="ignore"):
        dn = np.where(nrm > 0, np.einsum("iN,ikN->kN", f, Jf) / np.where(nrm > 0, nrm, 1.0), 0.0)
    J = Jf / g - delta * f[:, None] * dn[None, :] / g**2
    return f / g, J


def drift_average(b: DriftSpec, grid: Grid, t0: float, t1: float) -> np.ndarray:
    """Face-normal drift averaged over ``[t0, t1]`` by the midpoint rule, shape ``(n, F)``."""
    vals = b.evaluate(grid.face_coords, 0.5 * (t0 + t1))
    return np.take_along_axis(vals, grid.face_axis[None, :, None], axis=2)[..., 0]


def drift_average_step(b: DriftSpec, grid: Grid, k: int, tau: float) -> np.ndarray:
    """Drift for step ``k >= 1`` of size ``tau``."""
    if k < 1:
        raise ValueError("step index starts at 1")
    return drift_average(b, grid, (k - 1) * tau, k * tau)


# ----------------------------------------------------------------------------
# Discretization
# ----------------------------------------------------------------------------


@dataclass
class StepState:
    """Intermediate quantities at one iterate."""

    u: np.ndarray
    uf: np.ndarray
    gu: np.ndarray
    gw: np.ndarray
    B1: np.ndarray
    drift_sel: np.ndarray  # u value used in the drift flux, (n, F)
    upwind: np.ndarray  # bool (n, F)
    flux: np.ndarray
    freg: np.ndarray


class Discretization:
    """Residual and Jacobian of one implicit step on a fixed grid."""

    def __init__(self, spec: SystemSpec, grid: Grid, params: SchemeParams):
        if spec.drift.d != grid.dim and spec.drift.kind != "zero":
            raise ValueError(f"drift is {spec.drift.d}-dimensional but the grid is {grid.dim}-dimensional")
        self.spec = spec
        self.grid = grid
        self.params = params
        self.n = spec.n
        self.N = grid.size
        self.pi = spec.entropy.pi[:, None]
        self.lam = spec.entropy.lam[:, None]
        self.Gm = grid.grad_matrix
        self.Am = grid.avg_matrix
        self.Dm = grid.div_matrix
        self.reg = grid.regularization_matrix(params.order(grid)) if params.eps > 0 else None
        self.left, self.right = grid.face_nodes
        h = np.asarray(grid.spacing)
        self.face_h = h[grid.face_axis]
        self._drift_cache: dict = {}

    # -- helpers ------------------------------------------------------------

    def to_primal(self, w: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            u = np.exp(w / self.pi - self.lam)
        bad = ~np.isfinite(u) | (u <= 0)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise NonFiniteError(f"exponential map overflow/underflow at species {i}, node {j} (w={w[i, j]:.6g})", j, i)
        return u

    def to_entropy(self, u: np.ndarray) -> np.ndarray:
        return entropy_gradient(self.spec.entropy, u)

    def drift(self, t0: float, t1: float) -> np.ndarray | None:
        if self.spec.drift.kind == "zero":
            return None
        key = (t0, t1) if self.spec.drift.time_dependent else None
        if key not in self._drift_cache:
            self._drift_cache[key] = drift_average(self.spec.drift, self.grid, t0, t1)
        return self._drift_cache[key]

    def _state(self, w: np.ndarray, b: np.ndarray | None) -> StepState:
        spec = self.spec
        u = self.to_primal(w)
        uf = (self.Am @ u.T).T
        gu = (self.Gm @ u.T).T
        gw = (self.Gm @ w.T).T
        _, B1 = onsager_split(spec, uf)
        flux = spec.a0[:, None] * gu + np.einsum("ijF,jF->iF", B1, gw)
        sel = uf
        upwind = np.zeros_like(uf, dtype=bool)
        if b is not None:
            # diagonal of A(u) at the face sets the cell Peclet number
            Dii = spec.a0[:, None] + spec.a @ uf + np.diag(spec.a)[:, None] * uf
            with np.errstate(divide="ignore", invalid="ignore"):
                pe = np.abs(b) * self.face_h[None, :] / Dii
            upwind = pe > self.params.peclet_threshold
            u_up = np.where(b > 0, u[:, self.left], u[:, self.right])
            sel = np.where(upwind, u_up, uf)
            flux = flux - sel * b
        f, _ = _regularized_reaction_and_jac(spec, u, self.params.delta) if spec.reaction.kind != "zero" else (np.zeros_like(u), None)
        return StepState(u, uf, gu, gw, B1, sel, upwind, flux, f)

    # -- residual -----------------------------------------------------------

    def residual(self, w: np.ndarray, u_prev: np.ndarray, tau: float, t0: float) -> np.ndarray:
        st = self._state(w, self.drift(t0, t0 + tau))
        return self._residual_from_state(st, w, u_prev, tau)

    def _residual_from_state(self, st: StepState, w, u_prev, tau) -> np.ndarray:
        R = (st.u - u_prev) / tau - (self.Dm @ st.flux.T).T - st.freg
        eps = self.params.eps
        if eps > 0:
            R = R + eps * ((self.reg @ w.T).T + w)
        if not np.all(np.isfinite(R)):
            i, j = np.argwhere(~np.isfinite(R))[0]
            raise NonFiniteError(f"non-finite residual at species {i}, node {j}", j, i)
        return R

    # -- Jacobian -----------------------------------------------------------

    def jacobian(self, w: np.ndarray, u_prev: np.ndarray, tau: float, t0: float) -> sp.csr_matrix:
        spec, n, N = self.spec, self.n, self.N
        b = self.drift(t0, t0 + tau)
        st = self._state(w, b)
        D = st.u / self.pi  # du/dw
        dB = onsager_quadratic_derivative(spec, st.uf)  # (i, j, k, F)
        coupling = np.einsum("ijkF,jF->ikF", dB, st.gw)  # d(sum_j B1_ij gw_j)/d uf_k
        GD = [self.Gm @ sp.diags(D[k]) for k in range(n)]
        AD = [self.Am @ sp.diags(D[k]) for k in range(n)]
        if spec.reaction.kind != "zero":
            _, Jf = _regularized_reaction_and_jac(spec, st.u, self.params.delta)
        else:
            Jf = None
        blocks = [[None] * n for _ in range(n)]
        for i in range(n):
            for k in range(n):
                dF = sp.diags(st.B1[i, k]) @ self.Gm + sp.diags(coupling[i, k]) @ AD[k]
                if i == k:
                    if spec.a0[i] != 0:
                        dF = dF + spec.a0[i] * GD[i]
                    if b is not None:
                        dF = dF - sp.diags(b[i]) @ self._selection(st.upwind[i], b[i]) @ sp.diags(D[i])
                blk = -(self.Dm @ dF)
                diag = np.zeros(N)
                if i == k:
                    diag += D[i] / tau
                if Jf is not None:
                    diag -= Jf[i, k] * D[k]
                blk = blk + sp.diags(diag)
                if i == k and self.reg is not None:
                    blk = blk + self.params.eps * (self.reg + sp.identity(N))
                blocks[i][k] = blk
        return sp.bmat(blocks, format="csc")

    def _selection(self, upwind: np.ndarray, b: np.ndarray) -> sp.csr_matrix:
        if not np.any(upwind):
            return self.Am
        F = upwind.size
        rows_c = np.flatnonzero(~upwind)
        rows_u = np.flatnonzero(upwind)
        up_nodes = np.where(b[rows_u] > 0, self.left[rows_u], self.right[rows_u])
        rows = np.concatenate([rows_c, rows_c, rows_u])
        cols = np.concatenate([self.left[rows_c], self.right[rows_c], up_nodes])
        vals = np.concatenate([np.full(rows_c.size, 0.5), np.full(rows_c.size, 0.5), np.ones(rows_u.size)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(F, self.N))

    # -- diagnostics --------------------------------------------------------

    def dissipation(self, w: np.ndarray, t0: float, tau: float) -> dict:
        """Discrete entropy production terms at ``w`` (all but the drift work are >= 0)."""
        b = self.drift(t0, t0 + tau)
        st = self._state(w, b)
        W = self.grid.face_weights
        M = self.grid.mass
        lin = float(np.sum(self.spec.a0[:, None] * st.gw * st.gu * W))
        quad = float(np.einsum("iF,ijF,jF,F->", st.gw, st.B1, st.gw, W))
        reg = 0.0
        if self.params.eps > 0:
            reg = self.params.eps * float(np.sum(w * (self.reg @ w.T).T * M) + np.sum(w * w * M))
        reac = -float(np.sum(st.freg * w * M))
        drift_work = 0.0 if b is None else float(np.sum(st.drift_sel * b * st.gw * W))
        return dict(diffusion=lin + quad, regularization=reg, reaction=reac, drift=drift_work,
                    total=lin + quad + reg + reac - drift_work, freg=st.freg)


# ----------------------------------------------------------------------------
# Newton
# ----------------------------------------------------------------------------


@dataclass
class NewtonResult:
    w: np.ndarray
    iterations: int
    residual: float
    damping_events: int
    fallback_sweeps: int
    trace: list[float]


def _newton(disc: Discretization, w_init: np.ndarray, u_prev: np.ndarray, tau: float, t0: float) -> NewtonResult:
    ctl = disc.params.newton
    w = np.array(w_init, dtype=float)
    r = disc.residual(w, u_prev, tau, t0)
    nrm = float(np.max(np.abs(r)))
    trace = [nrm]
    it = damping = sweeps = fallbacks = 0
    while nrm > ctl.tol:
        if it >= ctl.max_iter:
            raise NonConvergence(f"Newton did not reach tol={ctl.tol:g} in {ctl.max_iter} iterations (residual {nrm:.3e})", trace)
        J = disc.jacobian(w, u_prev, tau, t0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            dw = spla.spsolve(J, -r.ravel()).reshape(w.shape)
        accepted = False
        if np.all(np.isfinite(dw)):
            biggest = float(np.max(np.abs(dw)))
            s = min(1.0, ctl.max_update / biggest) if biggest > 0 else 1.0
            merit = float(np.sum(r * r))
            while s >= ctl.min_step:
                try:
                    r_new = disc.residual(w + s * dw, u_prev, tau, t0)
                except NonFiniteError:
                    r_new = None
                if r_new is not None and float(np.sum(r_new * r_new)) <= (1.0 - 1e-4 * s) * merit:
                    accepted = True
                    break
                s *= ctl.backtrack
                damping += 1
        if accepted:
            w = w + s * dw
            r = r_new
        else:
            fallbacks += 1
            if fallbacks > ctl.max_fallbacks:
                raise NonConvergence(f"Newton stagnated at residual {nrm:.3e} after {it} iterations", trace)
            w, r, done = _relax(disc, w, r, J, u_prev, tau, t0)
            sweeps += done
        nrm = float(np.max(np.abs(r)))
        trace.append(nrm)
        it += 1
    return NewtonResult(w, it, nrm, damping, sweeps, trace)


def _relax(disc, w, r, J, u_prev, tau, t0):
    """Jacobi-preconditioned damped relaxation sweeps; keeps the best iterate."""
    ctl = disc.params.newton
    diag = J.diagonal().reshape(w.shape)
    diag = np.where(np.abs(diag) > 0, diag, 1.0)
    omega = ctl.relax_omega
    best_w, best_r = w, r
    best = float(np.sum(r * r))
    done = 0
    for _ in range(ctl.relax_sweeps):
        trial = w - omega * r / diag
        try:
            r_trial = disc.residual(trial, u_prev, tau, t0)
        except NonFiniteError:
            omega *= 0.5
            continue
        w, r = trial, r_trial
        done += 1
        val = float(np.sum(r * r))
        if val < best:
            best_w, best_r, best = w, r, val
    return best_w, best_r, done


# ----------------------------------------------------------------------------
# Public single-step API
# ----------------------------------------------------------------------------


def assemble_residual(w, w_prev, params: SchemeParams, spec: SystemSpec, grid: Grid, k: int = 1) -> np.ndarray:
    """Nodal residual of step ``k`` at the candidate ``w`` (both in entropy form)."""
    disc = Discretization(spec, grid, params)
    u_prev = entropy_to_primal(spec.entropy, np.asarray(w_prev, dtype=float))
    return disc.residual(np.asarray(w, dtype=float), u_prev, params.tau, (k - 1) * params.tau)


def assemble_jacobian(w, w_prev, params: SchemeParams, spec: SystemSpec, grid: Grid, k: int = 1) -> sp.csc_matrix:
    disc = Discretization(spec, grid, params)
    u_prev = entropy_to_primal(spec.entropy, np.asarray(w_prev, dtype=float))
    return disc.jacobian(np.asarray(w, dtype=float), u_prev, params.tau, (k - 1) * params.tau)


@dataclass
class StepReport:
    step: int
    time: float
    newton_iters: int
    residual: float
    damping_events: int
    fallback_sweeps: int
    substeps: int
    entropy_before: float
    entropy_after: float
    mass_before: np.ndarray
    mass_after: np.ndarray
    prod_l2: np.ndarray
    prod_sqrt: np.ndarray
    prod_cross: np.ndarray
    mass_balance: np.ndarray
    dissipation: float
    drift_work: float
    entropy_slack: float

    @property
    def entropy_budget(self) -> float:
        """``H^k - H^{k-1} + tau D_k``; bounded above by :attr:`entropy_slack`."""
        return self.entropy_after - self.entropy_before + self.dissipation


def newton_solve(w_init, w_prev, params: SchemeParams, spec: SystemSpec, grid: Grid, k: int = 1):
    """Solve step ``k`` starting from ``w_init``; returns ``(w_next, StepReport)``."""
    disc = Discretization(spec, grid, params)
    w_prev = np.asarray(w_prev, dtype=float)
    u_prev = entropy_to_primal(spec.entropy, w_prev)
    t0 = (k - 1) * params.tau
    res = _newton(disc, np.asarray(w_init, dtype=float), u_prev, params.tau, t0)
    rep = _make_report(disc, k, t0 + params.tau, u_prev, [(res, params.tau, t0)])
    return res.w, rep


def _make_report(disc: Discretization, k: int, t: float, u_prev: np.ndarray, solves) -> StepReport:
    grid, spec, params = disc.grid, disc.spec, disc.params
    res_last = solves[-1][0]
    w = res_last.w
    u = disc.to_primal(w)
    ent = spec.entropy
    tau = params.tau
    change = G.integrate(grid, u) - G.integrate(grid, u_prev)
    diss = drift_w = slack = 0.0
    for res, dt, s0 in solves:
        d = disc.dissipation(res.w, s0, dt)
        change = change + dt * (params.eps * G.integrate(grid, res.w) - G.integrate(grid, d["freg"]))
        diss += dt * d["total"]
        drift_w += dt * d["drift"]
        slack += dt * res.residual * float(G.integrate(grid, np.abs(res.w)).sum())
    norms = G.l2_grad_norms(grid, u)
    return StepReport(
        step=k,
        time=t,
        newton_iters=sum(r.iterations for r, *_ in solves),
        residual=res_last.residual,
        damping_events=sum(r.damping_events for r, *_ in solves),
        fallback_sweeps=sum(r.fallback_sweeps for r, *_ in solves),
        substeps=len(solves),
        entropy_before=float(G.integrate(grid, entropy_density(ent, u_prev))),
        entropy_after=float(G.integrate(grid, entropy_density(ent, u))),
        mass_before=G.integrate(grid, u_prev),
        mass_after=G.integrate(grid, u),
        prod_l2=norms.l2,
        prod_sqrt=norms.sqrt,
        prod_cross=norms.cross,
        mass_balance=change / tau,
        dissipation=diss,
        drift_work=drift_w,
        entropy_slack=slack,
    )


# ----------------------------------------------------------------------------
# March
# ----------------------------------------------------------------------------


@dataclass
class Trajectory:
    grid: Grid
    spec: SystemSpec
    params: SchemeParams
    initial: np.ndarray
    times: list[float] = field(default_factory=list)
    fields: list[np.ndarray] = field(default_factory=list)
    reports: list[StepReport] = field(default_factory=list)

    @property
    def num_steps(self) -> int:
        return len(self.fields) - 1

    def primal(self, k: int) -> np.ndarray:
        return self.fields[k]

    def entropy_vars(self, k: int) -> np.ndarray:
        return entropy_gradient(self.spec.entropy, self.fields[k])

    def field(self, k: int) -> Field:
        return Field(self.grid, self.fields[k], "primal")

    @property
    def max_density_sum(self) -> float:
        return float(max(np.max(u.sum(axis=0)) for u in self.fields))


def _advance(disc: Discretization, w: np.ndarray, u_prev: np.ndarray, tau: float, t0: float, depth: int):
    """Advance by ``tau``, halving on failure; returns the list of solves."""
    try:
        return [(_newton(disc, w, u_prev, tau, t0), tau, t0)]
    except NonConvergence as exc:
        if depth >= disc.params.max_halvings:
            raise
        log.info("step at t=%.6g failed (%s); retrying with two substeps", t0, exc)
    half = 0.5 * tau
    first = _advance(disc, w, u_prev, half, t0, depth + 1)
    w_mid = first[-1][0].w
    second = _advance(disc, w_mid, disc.to_primal(w_mid), half, t0 + half, depth + 1)
    return first + second


def march(spec: SystemSpec, grid: Grid, u0, params: SchemeParams, hypotheses=None) -> Trajectory:
    """Run the scheme from ``u0`` to ``params.t_end``.

    ``hypotheses`` (a :class:`~crossdiff.hypotheses.HypothesisReport`) is
    advisory; a warning is logged when no entropy structure is certified.
    """
    if hypotheses is not None and getattr(hypotheses, "classification", None) == "none":
        log.warning("no structural hypothesis certified for this system; entropy decay is not guaranteed")
    values = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    values = np.atleast_2d(values)
    if values.shape != (spec.n, grid.size):
        raise ValueError(f"initial data must have shape ({spec.n}, {grid.size}), got {values.shape}")
    eps_cut = params.eps_cut if params.eps_cut is not None else default_eps_cut(spec.entropy)
    uc = initial_cutoff(values, eps_cut, spec.entropy)
    disc = Discretization(spec, grid, params)
    traj = Trajectory(grid, spec, params, values.copy(), [0.0], [uc])
    w = disc.to_entropy(uc)
    u_prev = uc
    tau = params.tau
    for k in range(1, params.num_steps + 1):
        t0 = (k - 1) * tau
        try:
            solves = _advance(disc, w, u_prev, tau, t0, 0)
        except NonConvergence as exc:
            exc.step = k
            exc.trajectory = traj
            raise
        w = solves[-1][0].w
        u = disc.to_primal(w)
        traj.reports.append(_make_report(disc, k, k * tau, u_prev, solves))
        traj.times.append(k * tau)
        traj.fields.append(u)
        u_prev = u
    return traj


# ----------------------------------------------------------------------------
# Limit sweeps
# ----------------------------------------------------------------------------


def spacetime_l1_difference(a: Trajectory, b: Trajectory) -> float:
    """``int_0^T int |u_a - u_b|`` of the piecewise-constant interpolants.

    Time grids must be nested; spatial grids must be equal or dyadically
    nested (the finer one is injected onto the coarser nodes).
    """
    if a.params.tau < b.params.tau:
        a, b = b, a
    ratio = a.params.tau / b.params.tau
    r = int(round(ratio))
    if abs(ratio - r) > 1e-9 or not math.isclose(a.params.t_end, b.params.t_end):
        raise ValueError("trajectories need nested time grids over the same interval")
    grid, pick = _common_grid(a.grid, b.grid)
    total = 0.0
    for j in range(1, b.num_steps + 1):
        ka = (j - 1) // r + 1
        ua, ub = a.fields[ka], b.fields[j]
        ua, ub = pick(ua, a.grid), pick(ub, b.grid)
        total += b.params.tau * float(np.sum(G.integrate(grid, np.abs(ua - ub))))
    return total


def _common_grid(ga: Grid, gb: Grid):
    if ga.nodes == gb.nodes and ga.extents == gb.extents:
        return ga, lambda u, g: u
    coarse = ga if ga.size <= gb.size else gb
    fine = gb if coarse is ga else ga
    if coarse.extents != fine.extents:
        raise ValueError("grids cover different domains")
    strides = []
    for nc, nf in zip(coarse.nodes, fine.nodes):
        s = (nf - 1) // (nc - 1)
        if (nc - 1) * s != nf - 1:
            raise ValueError("spatial grids are not nested")
        strides.append(s)

    def pick(u, g):
        if g is coarse:
            return u
        shaped = u.reshape((u.shape[0],) + fine.nodes)
        sl = (slice(None),) + tuple(slice(None, None, s) for s in strides)
        return shaped[sl].reshape(u.shape[0], -1)

    return coarse, pick


@dataclass
class SweepEntry:
    stage: str
    index: int
    tau: float
    eps: float
    delta: float
    nodes: tuple[int, ...]
    l1_diff_prev: float
    final_entropy: float
    final_mass: np.ndarray
    newton_iters: int


@dataclass
class SweepReport:
    entries: list[SweepEntry]
    trajectories: list[Trajectory]


def limit_sweep(spec: SystemSpec, grids, u0_fn, params_ladder: Sequence[SchemeParams], delta_ladder: Sequence[float] = ()) -> SweepReport:
    """Run ``params_ladder`` (typically eps = tau -> 0) and then the ``delta``
    ladder at the last parameters, recording successive space-time L1
    differences.

    ``grids`` is one grid or a list matching ``params_ladder``; ``u0_fn``
    maps a grid to initial values.
    """
    if isinstance(grids, Grid):
        grids = [grids] * len(params_ladder)
    if len(grids) != len(params_ladder):
        raise ValueError("grid ladder and parameter ladder differ in length")
    runs = [("eps_tau", g, p) for g, p in zip(grids, params_ladder)]
    if delta_ladder:
        g_last, p_last = grids[-1], params_ladder[-1]
        runs += [("delta", g_last, p_last.replace(delta=float(d))) for d in delta_ladder]
    entries, trajs = [], []
    prev_by_stage: dict[str, Trajectory] = {}
    for idx, (stage, g, p) in enumerate(runs):
        traj = march(spec, g, u0_fn(g), p)
        prev = prev_by_stage.get(stage)
        diff = float("nan") if prev is None else spacetime_l1_difference(prev, traj)
        prev_by_stage[stage] = traj
        last = traj.fields[-1]
        entries.append(SweepEntry(stage, idx, p.tau, p.eps, p.delta, g.nodes, diff,
                                  float(G.integrate(g, entropy_density(spec.entropy, last))),
                                  G.integrate(g, last), sum(r.newton_iters for r in traj.reports)))
        trajs.append(traj)
    return SweepReport(entries, trajs)
