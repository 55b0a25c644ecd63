"""Continuous model algebra for SKT-type reaction-cross-diffusion systems.

The system for ``n`` species reads::

    du_i/dt - div( sum_j A_ij(u) grad u_j - u_i b_i ) = f_i(u)

with the affine diffusion coefficients::

    A_ij(u) = delta_ij (a_i0 + sum_k a_ik u_k) + a_ij u_i

and the entropy density ``h(u) = sum_i pi_i h_i(u_i)`` where
``h_i(s) = s (log s - 1 + lambda_i) + exp(-lambda_i)``.

Entropy variables are ``w = h'(u)``, i.e. ``w_i = pi_i (log u_i + lambda_i)``.

Every function here accepts a single state (arrays of shape ``(n,)``) or a
batch of states with the species axis first (shape ``(n, ...)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class ModelError(ValueError):
    """Invalid model data (negative coefficients, shape mismatch, ...)."""


# ----------------------------------------------------------------------------
# Entropy
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyParams:
    """Weights ``pi_i > 0`` and shifts ``lambda_i`` of the entropy density."""

    pi: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if pi.ndim != 1 or lam.shape != pi.shape:
            raise ModelError(f"pi and lambda must be vectors of equal length, got {pi.shape} and {lam.shape}")
        if not np.all(np.isfinite(pi)) or np.any(pi <= 0):
            raise ModelError(f"entropy weights must be positive, got pi={pi.tolist()}")
        if not np.all(np.isfinite(lam)):
            raise ModelError("entropy shifts must be finite")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def unit(cls, n: int) -> "EntropyParams":
        return cls(np.ones(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.pi.size

    @property
    def equilibrium(self) -> np.ndarray:
        """Minimiser ``u_i = exp(-lambda_i)`` of the entropy density."""
        return np.exp(-self.lam)


def _col(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    # broadcast a per-species vector against (n, ...) data
    return v.reshape((-1,) + (1,) * (like.ndim - 1))


def entropy_density(p: EntropyParams, u) -> np.ndarray | float:
    """Return ``h(u) = sum_i pi_i h_i(u_i)``; ``s log s`` is extended by 0 at 0."""
    u = np.asarray(u, dtype=float)
    _check_species(u, p.n)
    pi, lam = _col(p.pi, u), _col(p.lam, u)
    with np.errstate(divide="ignore", invalid="ignore"):
        slog = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
    hi = slog + u * (lam - 1.0) + np.exp(-lam)
    out = np.sum(pi * hi, axis=0)
    return float(out) if out.ndim == 0 else out


def entropy_gradient(p: EntropyParams, u) -> np.ndarray:
    """Entropy variables ``w_i = pi_i (log u_i + lambda_i)``."""
    u = np.asarray(u, dtype=float)
    _check_species(u, p.n)
    _require_positive(u)
    return _col(p.pi, u) * (np.log(u) + _col(p.lam, u))


def entropy_hessian(p: EntropyParams, u) -> np.ndarray:
    """``h''(u) = diag(pi_i / u_i)`` for a single state."""
    u = np.asarray(u, dtype=float)
    _check_species(u, p.n)
    _require_positive(u)
    if u.ndim != 1:
        raise ModelError("entropy_hessian expects a single state of shape (n,)")
    return np.diag(p.pi / u)


def entropy_to_primal(p: EntropyParams, w) -> np.ndarray:
    """Inverse of :func:`entropy_gradient`: ``u_i = exp(w_i / pi_i - lambda_i)``."""
    w = np.asarray(w, dtype=float)
    _check_species(w, p.n)
    with np.errstate(over="ignore"):
        u = np.exp(w / _col(p.pi, w) - _col(p.lam, w))
    return u


# ----------------------------------------------------------------------------
# Reactions
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Reaction:
    """Reversible reaction ``sum alpha_i X_i <-> sum beta_i X_i``."""

    alpha: np.ndarray
    beta: np.ndarray
    kf: float
    kb: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha)
        beta = np.asarray(self.beta)
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise ModelError("stoichiometry vectors must be 1-D and of equal length")
        if np.any(alpha < 0) or np.any(beta < 0) or np.any(alpha != np.round(alpha)) or np.any(beta != np.round(beta)):
            raise ModelError("stoichiometric coefficients must be nonnegative integers")
        if np.array_equal(alpha, beta):
            raise ModelError("reaction with identical reactant and product complexes")
        if not (self.kf > 0 and self.kb > 0):
            raise ModelError(f"rate constants must be positive, got kf={self.kf}, kb={self.kb}")
        object.__setattr__(self, "alpha", alpha.astype(int))
        object.__setattr__(self, "beta", beta.astype(int))
        object.__setattr__(self, "kf", float(self.kf))
        object.__setattr__(self, "kb", float(self.kb))

    @property
    def net(self) -> np.ndarray:
        return self.beta - self.alpha


def _monomial(u: np.ndarray, expo: np.ndarray) -> np.ndarray:
    out = np.ones(u.shape[1:])
    for i, e in enumerate(expo):
        if e:
            out = out * u[i] ** e
    return out


def _monomial_grad(u: np.ndarray, expo: np.ndarray) -> np.ndarray:
    # d/du_k prod_l u_l^e_l, shape (n, ...)
    g = np.zeros_like(u)
    for k, ek in enumerate(expo):
        if not ek:
            continue
        term = ek * u[k] ** (ek - 1)
        for l, el in enumerate(expo):
            if l != k and el:
                term = term * u[l] ** el
        g[k] = term
    return g


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction term ``f(u)``.

    Use :meth:`zero`, :meth:`mass_action`, :meth:`custom` or
    :meth:`lotka_volterra` to build one.  ``fn`` and ``jac`` of a custom
    reaction take ``u`` of shape ``(n, ...)`` and return ``(n, ...)`` and
    ``(n, n, ...)`` arrays.
    """

    kind: str
    n: int
    reactions: tuple[Reaction, ...] = ()
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""

    @classmethod
    def zero(cls, n: int) -> "ReactionSpec":
        return cls("zero", n)

    @classmethod
    def mass_action(cls, reactions: Sequence[Reaction]) -> "ReactionSpec":
        reactions = tuple(reactions)
        if not reactions:
            raise ModelError("mass-action spec needs at least one reaction")
        sizes = {r.alpha.size for r in reactions}
        if len(sizes) != 1:
            raise ModelError("all reactions must involve the same number of species")
        return cls("mass_action", sizes.pop(), reactions=reactions)

    @classmethod
    def custom(cls, n: int, fn, jac=None, label: str = "custom") -> "ReactionSpec":
        return cls("custom", n, fn=fn, jac=jac, label=label)

    @classmethod
    def lotka_volterra(cls, growth, interaction) -> "ReactionSpec":
        """``f_i = u_i (r_i - sum_j c_ij u_j)``."""
        r = np.asarray(growth, dtype=float)
        c = np.asarray(interaction, dtype=float)
        n = r.size
        if c.shape != (n, n):
            raise ModelError("interaction matrix must be n x n")

        def fn(u):
            return u * (_col(r, u) - np.tensordot(c, u, axes=1))

        def jac(u):
            inner = _col(r, u) - np.tensordot(c, u, axes=1)
            out = -c.reshape(c.shape + (1,) * (u.ndim - 1)) * u[:, None]
            idx = np.arange(n)
            out[idx, idx] += inner
            return out

        return cls("custom", n, fn=fn, jac=jac, label="lotka_volterra")

    def rates(self, u: np.ndarray) -> np.ndarray:
        """Net rates ``kf u^alpha - kb u^beta`` per reaction, shape ``(R, ...)``."""
        return np.stack([r.kf * _monomial(u, r.alpha) - r.kb * _monomial(u, r.beta) for r in self.reactions])


def reaction_eval(spec: ReactionSpec, u) -> np.ndarray:
    """Evaluate ``f(u)`` for ``u`` of shape ``(n, ...)``."""
    u = np.asarray(u, dtype=float)
    _check_species(u, spec.n)
    if spec.kind == "zero":
        return np.zeros_like(u)
    if spec.kind == "mass_action":
        f = np.zeros_like(u)
        for r in spec.reactions:
            rate = r.kf * _monomial(u, r.alpha) - r.kb * _monomial(u, r.beta)
            f += _col(r.net.astype(float), u) * rate
        return f
    return np.asarray(spec.fn(u), dtype=float)


def reaction_jacobian(spec: ReactionSpec, u) -> np.ndarray:
    """``df_i/du_k`` with shape ``(n, n, ...)``.

    Custom reactions without an analytic Jacobian fall back to central
    differences.
    """
    u = np.asarray(u, dtype=float)
    n = spec.n
    out = np.zeros((n, n) + u.shape[1:])
    if spec.kind == "zero":
        return out
    if spec.kind == "mass_action":
        for r in spec.reactions:
            grad = r.kf * _monomial_grad(u, r.alpha) - r.kb * _monomial_grad(u, r.beta)
            out += r.net.astype(float).reshape((n, 1) + (1,) * (u.ndim - 1)) * grad[None]
        return out
    if spec.jac is not None:
        return np.asarray(spec.jac(u), dtype=float)
    for k in range(n):
        step = 1e-7 * np.maximum(1.0, np.abs(u[k]))
        up, dn = u.copy(), u.copy()
        up[k] += step
        dn[k] = np.maximum(dn[k] - step, 0.0)
        out[:, k] = (spec.fn(up) - spec.fn(dn)) / (up[k] - dn[k])
    return out


# ----------------------------------------------------------------------------
# Drift
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    """Environmental drift ``b_i(x, t)``, one d-vector per species.

    Kinds: ``zero``, ``constant`` (``value`` of shape ``(n, d)``),
    ``tabulated`` (node values of shape ``(n, d, *axis_lengths)`` on a
    tensor grid, multilinear interpolation, constant in time) and ``custom``
    (``fn(points, t)`` with ``points`` of shape ``(P, d)`` returning
    ``(n, P, d)``).
    """

    kind: str
    n: int
    d: int
    value: np.ndarray | None = None
    axes: tuple[np.ndarray, ...] = ()
    fn: Callable | None = None
    _interp: tuple = field(default=(), repr=False, compare=False)

    @classmethod
    def zero(cls, n: int, d: int = 1) -> "DriftSpec":
        return cls("zero", n, d)

    @classmethod
    def constant(cls, value) -> "DriftSpec":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls("constant", value.shape[0], value.shape[1], value=value)

    @classmethod
    def tabulated(cls, axes, values) -> "DriftSpec":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        values = np.asarray(values, dtype=float)
        d = len(axes)
        if values.ndim != 2 + d or values.shape[1] != d or values.shape[2:] != tuple(a.size for a in axes):
            raise ModelError(f"tabulated drift values must have shape (n, {d}, *axis_lengths), got {values.shape}")
        interp = tuple(
            tuple(RegularGridInterpolator(axes, values[i, c], method="linear", bounds_error=False, fill_value=None) for c in range(d))
            for i in range(values.shape[0])
        )
        return cls("tabulated", values.shape[0], d, value=values, axes=axes, _interp=interp)

    @classmethod
    def custom(cls, n: int, d: int, fn) -> "DriftSpec":
        return cls("custom", n, d, fn=fn)

    @property
    def time_dependent(self) -> bool:
        return self.kind == "custom"

    def evaluate(self, points, t: float) -> np.ndarray:
        """Drift at ``points`` (shape ``(P, d)``); returns ``(n, P, d)``."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.d)
        P = pts.shape[0]
        if self.kind == "zero":
            return np.zeros((self.n, P, self.d))
        if self.kind == "constant":
            return np.broadcast_to(self.value[:, None, :], (self.n, P, self.d)).copy()
        if self.kind == "tabulated":
            out = np.empty((self.n, P, self.d))
            for i, comps in enumerate(self._interp):
                for c, itp in enumerate(comps):
                    out[i, :, c] = itp(pts)
            return out
        return np.asarray(self.fn(pts, t), dtype=float).reshape(self.n, P, self.d)


def drift_eval(spec: DriftSpec, x, t: float = 0.0) -> np.ndarray:
    """Drift vectors ``b_i(x, t)`` at a single point, shape ``(n, d)``."""
    return spec.evaluate(np.atleast_1d(np.asarray(x, dtype=float))[None, :], t)[:, 0, :]


# ----------------------------------------------------------------------------
# System
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemSpec:
    """Full problem description: coefficients, entropy, drift, reaction."""

    a0: np.ndarray
    a: np.ndarray
    entropy: EntropyParams
    drift: DriftSpec
    reaction: ReactionSpec

    def __post_init__(self):
        a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        n = a0.size
        if n < 1:
            raise ModelError("need at least one species")
        if a.shape != (n, n):
            raise ModelError(f"coefficient matrix must be {n}x{n}, got {a.shape}")
        if np.any(a0 < 0) or np.any(a < 0) or not (np.all(np.isfinite(a0)) and np.all(np.isfinite(a))):
            raise ModelError("diffusion coefficients a_i0, a_ij must be finite and nonnegative")
        for name, m in (("entropy", self.entropy.n), ("drift", self.drift.n), ("reaction", self.reaction.n)):
            if m != n:
                raise ModelError(f"{name} describes {m} species, coefficients describe {n}")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a0.size

    @classmethod
    def simple(cls, a0, a, entropy=None, drift=None, reaction=None, d: int = 1) -> "SystemSpec":
        """Convenience constructor with zero drift/reaction and unit entropy by default."""
        n = np.atleast_1d(a0).size
        return cls(
            a0,
            a,
            entropy if entropy is not None else EntropyParams.unit(n),
            drift if drift is not None else DriftSpec.zero(n, d),
            reaction if reaction is not None else ReactionSpec.zero(n),
        )

    def replace(self, **changes) -> "SystemSpec":
        kw = dict(a0=self.a0, a=self.a, entropy=self.entropy, drift=self.drift, reaction=self.reaction)
        kw.update(changes)
        return SystemSpec(**kw)


def diffusion_matrix(spec: SystemSpec, u) -> np.ndarray:
    """``A(u)`` with shape ``(n, n, ...)``."""
    u = np.asarray(u, dtype=float)
    _check_species(u, spec.n)
    n = spec.n
    tail = (1,) * (u.ndim - 1)
    a = spec.a.reshape((n, n) + tail)
    diag = spec.a0.reshape((n,) + tail) + np.tensordot(spec.a, u, axes=1)
    A = a * u[:, None]
    idx = np.arange(n)
    A[idx, idx] += diag
    return A


def onsager_matrix(spec: SystemSpec, u) -> np.ndarray:
    """``B = A(u) h''(u)^{-1}``, i.e. ``B_ij = A_ij(u) u_j / pi_j``."""
    u = np.asarray(u, dtype=float)
    _require_positive(u)
    A = diffusion_matrix(spec, u)
    return A * (u / _col(spec.entropy.pi, u))[None, :]


def onsager_split(spec: SystemSpec, v) -> tuple[np.ndarray, np.ndarray]:
    """Split ``B(v)`` into the linear part ``diag(a_i0 v_i / pi_i)`` and the
    quadratic remainder; both parts are returned as ``(n, n, ...)`` arrays."""
    v = np.asarray(v, dtype=float)
    n = spec.n
    pi = _col(spec.entropy.pi, v)
    B = onsager_matrix(spec, v)
    lin = np.zeros_like(B)
    idx = np.arange(n)
    lin[idx, idx] = _col(spec.a0, v) * v / pi
    return lin, B - lin


def onsager_quadratic_derivative(spec: SystemSpec, v) -> np.ndarray:
    """``d B1_ij / d v_k`` of the quadratic part, shape ``(n, n, n, ...)``."""
    v = np.asarray(v, dtype=float)
    n = spec.n
    tail = (1,) * (v.ndim - 1)
    pi = spec.entropy.pi
    a = spec.a
    out = np.zeros((n, n, n) + v.shape[1:])
    s = np.tensordot(a, v, axes=1)  # sum_k a_ik v_k
    for i in range(n):
        # diagonal: (sum_k a_ik v_k) v_i / pi_i
        out[i, i] += (a[i].reshape((n,) + tail) * v[i]) / pi[i]
        out[i, i, i] += s[i] / pi[i]
        for j in range(n):
            # a_ij v_i v_j / pi_j
            out[i, j, i] += a[i, j] * v[j] / pi[j]
            out[i, j, j] += a[i, j] * v[i] / pi[j]
    return out


def hA_matrix(spec: SystemSpec, u) -> np.ndarray:
    """``h''(u) A(u)`` with shape ``(n, n, ...)``."""
    u = np.asarray(u, dtype=float)
    _require_positive(u)
    return (_col(spec.entropy.pi, u) / u)[:, None] * diffusion_matrix(spec, u)


# ----------------------------------------------------------------------------


def _check_species(u: np.ndarray, n: int) -> None:
    if u.ndim == 0 or u.shape[0] != n:
        raise ModelError(f"expected leading species axis of length {n}, got shape {u.shape}")


def _require_positive(u: np.ndarray) -> None:
    if not np.all(u > 0):
        raise ModelError("operation requires strictly positive densities")
