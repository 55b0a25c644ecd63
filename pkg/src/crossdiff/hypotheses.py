"""Certification of the structural conditions on a :class:`SystemSpec`.

Covered here: the weak cross-diffusion constant, detailed balance of the
coefficient matrix (with the Kolmogorov cycle test), entropy shifts making a
mass-action network dissipative, sampled checks of the dissipativity
inequality, quasi-positivity and positivity of ``h''(u) A(u)``, and the
resulting classification.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import null_space

from .model import (
    EntropyParams,
    ModelError,
    ReactionSpec,
    SystemSpec,
    hA_matrix,
    reaction_eval,
)

SAMPLE_LOW = 1e-3
SAMPLE_HIGH = 1e3

CLASS_H5_PRIME = "H5-prime"
CLASS_H5_DP_A0 = "H5-doubleprime-a0"
CLASS_H5_DP_AII = "H5-doubleprime-aii"
CLASS_NONE = "none"


class WegscheiderError(ModelError):
    """The log-rate system of a mass-action network is inconsistent."""

    def __init__(self, message: str, cycle: list[tuple[int, float]]):
        super().__init__(message)
        self.cycle = cycle


def log_uniform_samples(rng: np.random.Generator, n: int, count: int, low=SAMPLE_LOW, high=SAMPLE_HIGH) -> np.ndarray:
    """``count`` points of ``[low, high]^n`` with log-uniform coordinates, shape ``(n, count)``."""
    return np.exp(rng.uniform(np.log(low), np.log(high), size=(n, count)))


# ----------------------------------------------------------------------------
# Coefficient conditions
# ----------------------------------------------------------------------------


def _check_coeffs(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"coefficient matrix must be square, got {a.shape}")
    if np.any(a < 0):
        raise ModelError("coefficients a_ij must be nonnegative")
    return a


def weak_cross_diffusion_alpha(a) -> float:
    """``min_i (a_ii - 1/4 sum_j (sqrt(a_ij) - sqrt(a_ji))^2)``."""
    a = _check_coeffs(a)
    s = np.sqrt(a)
    defect = 0.25 * np.sum((s - s.T) ** 2, axis=1)
    return float(np.min(np.diag(a) - defect))


@dataclass(frozen=True)
class DetailedBalance:
    """Outcome of the detailed-balance search.

    ``pi`` is None when no reversible measure exists; then ``cycle`` holds a
    node cycle ``(i0, i1, ..., i0)`` whose Kolmogorov product
    ``prod a_{i_k i_{k+1}} / prod a_{i_{k+1} i_k}`` (``cycle_ratio``) differs
    from one, or is empty when some off-diagonal coefficient vanishes.
    """

    pi: np.ndarray | None
    cycle: tuple[int, ...] = ()
    cycle_ratio: float = float("nan")
    reason: str = ""


def find_detailed_balance(a, rtol: float = 1e-12) -> DetailedBalance:
    a = _check_coeffs(a)
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(a[off] <= 0):
        i, j = np.argwhere((a <= 0) & off)[0]
        return DetailedBalance(None, reason=f"a[{i}][{j}] = 0; detailed balance needs positive off-diagonal coefficients")
    # spanning tree by BFS from species 0
    pi = np.zeros(n)
    parent = np.full(n, -1)
    pi[0] = 1.0
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in range(n):
            if j not in seen:
                pi[j] = pi[i] * a[i, j] / a[j, i]
                parent[j] = i
                seen.add(j)
                queue.append(j)
    lhs = pi[:, None] * a
    bad = np.abs(lhs - lhs.T) > rtol * np.maximum(np.abs(lhs), np.abs(lhs.T))
    bad &= off
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        cycle = _tree_cycle(parent, i, j)
        fwd = np.prod([a[cycle[k], cycle[k + 1]] for k in range(len(cycle) - 1)])
        bwd = np.prod([a[cycle[k + 1], cycle[k]] for k in range(len(cycle) - 1)])
        return DetailedBalance(
            None,
            cycle=cycle,
            cycle_ratio=float(fwd / bwd),
            reason=f"Kolmogorov criterion fails on cycle {'->'.join(str(c + 1) for c in cycle)} (product ratio {fwd / bwd:.6g})",
        )
    return DetailedBalance(pi / pi.min())


def _tree_cycle(parent: np.ndarray, i: int, j: int) -> tuple[int, ...]:
    # cycle i -> j -> (tree path j..lca..i)
    def path_to_root(k):
        out = [k]
        while parent[k] >= 0:
            k = parent[k]
            out.append(k)
        return out

    pi_, pj = path_to_root(i), path_to_root(j)
    common = next(k for k in pi_ if k in pj)
    up_j = pj[: pj.index(common) + 1]
    down_i = list(reversed(pi_[: pi_.index(common)]))
    cyc = [i] + up_j + down_i
    if cyc[-1] != i:
        cyc.append(i)
    return tuple(int(c) for c in cyc)


def detailed_balance_measure(a) -> np.ndarray | None:
    """Reversible measure ``pi`` (normalised to ``min pi = 1``) or None."""
    return find_detailed_balance(a).pi


def lambda_from_mass_action(reaction: ReactionSpec, rtol: float = 1e-10) -> np.ndarray:
    """Minimum-norm shifts ``lambda`` with ``sum_i (beta_i - alpha_i) lambda_i = log(kb/kf)``
    for every reaction (entropy weights fixed to one).

    Raises
    ------
    WegscheiderError
        If the linear system is inconsistent; ``cycle`` lists the
        ``(reaction index, coefficient)`` pairs of a violating combination.
    """
    if reaction.kind != "mass_action":
        raise ModelError("lambda derivation needs a mass-action reaction spec")
    S = np.array([r.net for r in reaction.reactions], dtype=float)
    rhs = np.array([np.log(r.kb / r.kf) for r in reaction.reactions])
    lam, *_ = np.linalg.lstsq(S, rhs, rcond=None)
    resid = S @ lam - rhs
    if np.linalg.norm(resid) > rtol * (1.0 + np.linalg.norm(rhs)):
        Y = null_space(S.T)
        y = Y[:, np.argmax(np.abs(Y.T @ rhs))]
        y = y / np.max(np.abs(y))
        cycle = [(int(k), float(c)) for k, c in enumerate(y) if abs(c) > 1e-12]
        desc = " + ".join(f"{c:+.3g}*R{k + 1}" for k, c in cycle)
        raise WegscheiderError(
            f"rate constants violate the Wegscheider condition along {desc} "
            f"(log-rate mismatch {float(y @ rhs):.6g})",
            cycle,
        )
    return lam


# ----------------------------------------------------------------------------
# Sampled checks
# ----------------------------------------------------------------------------


@dataclass
class DissipativityReport:
    margin: float
    relative_margin: float
    certified: bool
    witness: list[float] | None
    count: int
    seed: int


def dissipation_values(spec: SystemSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``sum_i pi_i f_i(u)(log u_i + lambda_i)`` and the sum of absolute terms."""
    p = spec.entropy
    f = reaction_eval(spec.reaction, u)
    terms = p.pi[:, None] * f * (np.log(u) + p.lam[:, None])
    return terms.sum(axis=0), np.abs(terms).sum(axis=0)


def verify_dissipativity(spec: SystemSpec, seed: int = 0, count: int = 10_000, rtol: float = 1e-10) -> DissipativityReport:
    """Sample the dissipativity inequality; a positive value is a counterexample."""
    rng = np.random.default_rng(seed)
    u = log_uniform_samples(rng, spec.n, count)
    vals, mags = dissipation_values(spec, u)
    k = int(np.argmax(vals))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(mags > 0, vals / np.where(mags > 0, mags, 1.0), vals)
    certified = bool(np.all(vals <= rtol * mags))
    witness = None if certified else u[:, int(np.argmax(vals - rtol * mags))].tolist()
    return DissipativityReport(float(vals[k]), float(rel.max()), certified, witness, count, seed)


@dataclass
class QuasiPositivityReport:
    min_value: float
    holds: bool
    witness: list[float] | None
    species: int | None
    count: int


def verify_quasi_positivity(spec: SystemSpec, seed: int = 0, count: int = 2_000, atol: float = 1e-12) -> QuasiPositivityReport:
    """Check ``f_i(u) >= 0`` on the faces ``{u_i = 0}`` of the orthant."""
    rng = np.random.default_rng(seed)
    worst, wit, sp_ = np.inf, None, None
    for i in range(spec.n):
        u = log_uniform_samples(rng, spec.n, count)
        u[i] = 0.0
        fi = reaction_eval(spec.reaction, u)[i]
        k = int(np.argmin(fi))
        if fi[k] < worst:
            worst, wit, sp_ = float(fi[k]), u[:, k].tolist(), i
    holds = worst >= -atol
    return QuasiPositivityReport(worst, holds, None if holds else wit, None if holds else sp_, count)


@dataclass
class HAPositivityReport:
    min_rayleigh: float
    eta: float
    negatives: int
    bound_gap: float | None
    count: int


def lower_bound_quadratic(spec: SystemSpec, u: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Lower bound for ``z . h''(u)A(u) z`` valid under detailed balance."""
    pi, a, a0 = spec.entropy.pi, spec.a, spec.a0
    n = spec.n
    out = np.sum(pi[:, None] * a0[:, None] * z**2 / u, axis=0)
    out += 2.0 * np.sum(pi[:, None] * np.diag(a)[:, None] * z**2, axis=0)
    for i in range(n):
        for j in range(n):
            if i != j:
                out += 0.5 * pi[i] * a[i, j] * (np.sqrt(u[j] / u[i]) * z[i] + np.sqrt(u[i] / u[j]) * z[j]) ** 2
    return out


def verify_hA_positive(spec: SystemSpec, seed: int = 0, count: int = 2_000) -> HAPositivityReport:
    """Sample ``z . h''(u)A(u) z``; ``eta`` is half the smallest Rayleigh quotient."""
    rng = np.random.default_rng(seed)
    u = log_uniform_samples(rng, spec.n, count)
    z = rng.standard_normal((spec.n, count))
    M = hA_matrix(spec, u)
    q = np.einsum("ik,ijk,jk->k", z, M, z)
    zz = np.sum(z**2, axis=0)
    scale = np.einsum("ik,ijk,jk->k", np.abs(z), np.abs(M), np.abs(z))
    ray = q / zz
    neg = int(np.sum(q < -1e-12 * scale))
    gap = None
    if find_detailed_balance(spec.a).pi is not None and np.allclose(
        spec.entropy.pi / spec.entropy.pi.min(), find_detailed_balance(spec.a).pi, rtol=1e-10
    ):
        lb = lower_bound_quadratic(spec, u, z)
        gap = float(np.min((q - lb) / np.maximum(scale, 1e-300)))
    return HAPositivityReport(float(ray.min()), float(0.5 * ray.min()), neg, gap, count)


# ----------------------------------------------------------------------------
# Classification
# ----------------------------------------------------------------------------


@dataclass
class HypothesisReport:
    alpha: float | None
    alpha_value: float
    db_measure: list[float] | None
    db_reason: str
    classification: str
    h4_margin: float
    h4_relative_margin: float
    h4_certified: bool
    h4_witness: list[float] | None
    quasi_positive: bool
    quasi_positivity_min: float
    hA_min_rayleigh: float
    eta_empirical: float
    hA_negatives: int
    hA_bound_gap: float | None
    entropy_consistent: bool
    sample_count: int
    seed: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def classify_coefficients(a0, a) -> tuple[str, float | None, DetailedBalance]:
    """Classification from the coefficients alone; H5-prime wins ties, then
    the a_ii-variant of detailed balance before the a_i0-variant."""
    a0 = np.atleast_1d(np.asarray(a0, dtype=float))
    a = _check_coeffs(a)
    alpha_val = weak_cross_diffusion_alpha(a)
    alpha = alpha_val if np.all(np.diag(a) > 0) else None
    db = find_detailed_balance(a)
    if alpha is not None and alpha > 0:
        cls = CLASS_H5_PRIME
    elif db.pi is not None and np.all(np.diag(a) > 0):
        cls = CLASS_H5_DP_AII
    elif db.pi is not None and np.all(a0 > 0):
        cls = CLASS_H5_DP_A0
    else:
        cls = CLASS_NONE
    return cls, alpha, db


def classify_hypotheses(spec: SystemSpec, seed: int = 0, count: int = 10_000) -> HypothesisReport:
    cls, alpha, db = classify_coefficients(spec.a0, spec.a)
    pi = spec.entropy.pi
    notes = []
    # both structures available: follow the entropy weights in use
    if cls == CLASS_H5_PRIME and db.pi is not None and not np.allclose(pi, pi[0], rtol=1e-12):
        if np.allclose(pi / pi.min(), db.pi, rtol=1e-10):
            cls = CLASS_H5_DP_AII
            notes.append("weak cross-diffusion also holds; classified by the detailed-balance weights in use")
    if cls == CLASS_H5_PRIME:
        consistent = bool(np.allclose(pi, pi[0], rtol=1e-12))
        if not consistent:
            notes.append("weak cross-diffusion case expects equal entropy weights")
    elif cls in (CLASS_H5_DP_A0, CLASS_H5_DP_AII):
        consistent = bool(np.allclose(pi / pi.min(), db.pi, rtol=1e-10))
        if not consistent:
            notes.append(f"entropy weights {pi.tolist()} are not proportional to the reversible measure {db.pi.tolist()}")
    else:
        consistent = False
        notes.append("no entropy structure certified for these coefficients")
    dis = verify_dissipativity(spec, seed, count)
    qp = verify_quasi_positivity(spec, seed, min(count, 2_000))
    hp = verify_hA_positive(spec, seed, min(count, 2_000))
    if not dis.certified:
        notes.append("dissipativity inequality violated at a sampled state")
    return HypothesisReport(
        alpha=alpha,
        alpha_value=weak_cross_diffusion_alpha(spec.a),
        db_measure=None if db.pi is None else db.pi.tolist(),
        db_reason=db.reason,
        classification=cls,
        h4_margin=dis.margin,
        h4_relative_margin=dis.relative_margin,
        h4_certified=dis.certified,
        h4_witness=dis.witness,
        quasi_positive=qp.holds,
        quasi_positivity_min=qp.min_value,
        hA_min_rayleigh=hp.min_rayleigh,
        eta_empirical=hp.eta,
        hA_negatives=hp.negatives,
        hA_bound_gap=hp.bound_gap,
        entropy_consistent=consistent,
        sample_count=count,
        seed=seed,
        notes=notes,
    )


def derive_entropy(a0, a, reaction: ReactionSpec) -> EntropyParams:
    """Entropy parameters required by the structure of the problem.

    Mass-action networks fix ``pi = 1`` and take ``lambda`` from the
    log-rate system (the coefficients then must satisfy the weak
    cross-diffusion condition or be detailed balanced with equal weights).
    Otherwise ``pi`` is the reversible measure of ``a`` and ``lambda = 0``.
    """
    a = _check_coeffs(a)
    n = a.shape[0]
    db = find_detailed_balance(a)
    if reaction.kind == "mass_action":
        lam = lambda_from_mass_action(reaction)
        ok_db = db.pi is not None and np.allclose(db.pi, 1.0, rtol=1e-10)
        if not (weak_cross_diffusion_alpha(a) > 0 or ok_db):
            raise ModelError(
                "mass-action derivation needs unit entropy weights, but the coefficients satisfy neither "
                "the weak cross-diffusion condition nor detailed balance with equal weights"
                + (f" ({db.reason})" if db.reason else "")
            )
        return EntropyParams(np.ones(n), lam)
    if db.pi is None:
        raise ModelError(f"cannot derive entropy weights: {db.reason}")
    return EntropyParams(db.pi, np.zeros(n))
