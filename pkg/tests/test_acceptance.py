"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one PASS/FAIL line through the ``criterion`` fixture;
the lines are repeated in the terminal summary.
"""

import time
import warnings

import numpy as np
import pytest

from crossdiff import cli
from crossdiff.grid import Grid
from crossdiff.hypotheses import (
    find_detailed_balance,
    verify_dissipativity,
    weak_cross_diffusion_alpha,
)
from crossdiff.model import DriftSpec, EntropyParams, ReactionSpec, SystemSpec
from crossdiff.renorm import (
    BumpTest,
    RenormTestFunction,
    TruncationInactiveWarning,
    XiFunction,
    check_truncation_laws,
    defect_ladder,
    renorm_residual,
)
from crossdiff.scenario import PRESETS, preset
from crossdiff.scheme import NewtonControls, SchemeParams, assemble_jacobian, assemble_residual, march, newton_solve

HEAT = SystemSpec.simple([1.0], [[0.0]])


def _orders(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


@pytest.fixture(scope="module")
def skt2_run():
    sc = preset("skt2")
    assert sc.system.reaction.kind == "zero" and sc.system.drift.kind == "zero"
    assert sc.grid.nodes == (128,) and sc.params.num_steps == 200
    t0 = time.perf_counter()
    traj = march(sc.system, sc.grid, sc.initial_values(), sc.params)
    return sc, traj, time.perf_counter() - t0


def _heat_exact(x, t):
    return 2.0 + np.cos(np.pi * x) * np.exp(-np.pi**2 * t)


@pytest.fixture(scope="module")
def heat_runs():
    """Time refinement on a fine grid and space refinement at a small step."""
    t0 = time.perf_counter()
    tau_runs, h_runs = [], []
    g = Grid.interval(257)
    x = g.coords[:, 0]
    for steps in (16, 32, 64, 128):
        traj = march(HEAT, g, np.atleast_2d(_heat_exact(x, 0.0)), SchemeParams(tau=0.1 / steps, t_end=0.1))
        tau_runs.append((traj, float(np.max(np.abs(traj.fields[-1][0] - _heat_exact(x, 0.1))))))
    # tol 1e-7: at tau = 1e-6 the residual cannot go below ~1e-9 in floating point
    T = 1e-3
    for N in (5, 9, 17, 33):
        gh = Grid.interval(N)
        xh = gh.coords[:, 0]
        p = SchemeParams(tau=T / 1000, t_end=T, newton=NewtonControls(tol=1e-7))
        traj = march(HEAT, gh, np.atleast_2d(_heat_exact(xh, 0.0)), p)
        h_runs.append((traj, float(np.max(np.abs(traj.fields[-1][0] - _heat_exact(xh, T))))))
    return tau_runs, h_runs, time.perf_counter() - t0


def test_criterion_01_truncation_laws(criterion):
    t0 = time.perf_counter()
    levels = [2.0**k for k in range(11)]
    viol, fits = 0, []
    for n in (2, 3, 5):
        rep = check_truncation_laws(levels, n, count=10_000, seed=n)
        viol += len(rep.violations)
        fits.append(rep.hessian_fit_ratio)
    lo, hi = min(f[0] for f in fits), max(f[1] for f in fits)
    dt = time.perf_counter() - t0
    ok = viol == 0 and lo >= 0.5 and hi <= 2.0 and dt < 30
    criterion(1, ok, f"violations={viol}, C/L fit ratio in [{lo:.4f}, {hi:.4f}], {dt:.1f}s")


def test_criterion_02_entropy_decay(criterion, skt2_run):
    sc, traj, dt = skt2_run
    worst = max((r.entropy_after - r.entropy_before) / abs(r.entropy_before) for r in traj.reports)
    ok = len(traj.reports) == 200 and worst <= 1e-9 and dt < 30
    criterion(2, ok, f"max relative entropy increase {worst:.3e} over {len(traj.reports)} steps, {dt:.1f}s")


def test_criterion_03_positivity(criterion, skt2_run, heat_runs):
    runs = [skt2_run[1]] + [t for t, _ in heat_runs[0]] + [t for t, _ in heat_runs[1]]
    mins = [min(float(u.min()) for u in traj.fields) for traj in runs]
    ok = all(m > 0 for m in mins)
    criterion(3, ok, f"minimum nodal density {min(mins):.3e} over {len(runs)} runs")


def test_criterion_04_mass_balance(criterion, skt2_run):
    sc, traj, _ = skt2_run
    tol = sc.params.newton.tol
    worst = max(float(np.max(np.abs(r.mass_balance))) for r in traj.reports)
    # with reactions, regularization and a delta cutoff
    ma = preset("ma2")
    p = ma.params.replace(eps=1e-3, delta=0.05)
    traj2 = march(ma.system, ma.grid, ma.initial_values(), p)
    worst2 = max(float(np.max(np.abs(r.mass_balance))) for r in traj2.reports)
    ok = worst <= 10 * tol and worst2 <= 10 * p.newton.tol
    criterion(4, ok, f"max |mass-balance residual| skt2 {worst:.2e}, ma2 {worst2:.2e} (bound {10 * tol:.0e})")


def test_criterion_05_heat_exact_solution(criterion, heat_runs):
    tau_runs, h_runs, dt = heat_runs
    ot = _orders([e for _, e in tau_runs])
    oh = _orders([e for _, e in h_runs])
    ok = ot.min() >= 0.9 and oh.min() >= 1.9 and dt < 120
    criterion(5, ok, f"tau orders {np.round(ot, 3).tolist()}, h orders {np.round(oh, 3).tolist()}, {dt:.1f}s")


def test_criterion_06_hypothesis_checker(criterion):
    rng = np.random.default_rng(6)
    sym_ok = True
    for _ in range(20):
        m = rng.uniform(0, 3, (4, 4))
        a = m + m.T
        sym_ok &= weak_cross_diffusion_alpha(a) == np.min(np.diag(a))
    a3 = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 3.0], [1.0, 2.0, 1.0]])
    pi = find_detailed_balance(a3).pi
    pi_err = float(np.max(np.abs(pi / pi[0] - [1, 2, 3]) / [1, 2, 3]))
    k = np.ones((3, 3))
    k[0, 2] = 2.0
    bad = find_detailed_balance(k)
    named = bad.pi is None and "->" in bad.reason and bad.cycle[0] == bad.cycle[-1] and len(set(bad.cycle)) == 3
    ok = sym_ok and pi_err <= 1e-12 and named
    criterion(6, ok, f"symmetric alpha exact={sym_ok}, pi error {pi_err:.1e}, rejection: {bad.reason}")


def test_criterion_07_dissipativity(criterion):
    sc = preset("ma2")
    rep = verify_dissipativity(sc.system, seed=sc.audit["seed"], count=10_000, rtol=1e-10)
    criterion(7, rep.certified, f"lambda={np.round(sc.system.entropy.lam, 6).tolist()}, "
                                f"max relative margin {rep.relative_margin:.3e} over {rep.count} samples")


def _oracle_step(spec, grid, u_prev, tau, eps, iterations=100_000):
    """Damped fixed-point relaxation ``w <- w - 1e-3 tau R(w) / u`` of one implicit
    step, with the residual written out by hand for unit entropy weights in 1D."""
    a0 = spec.a0[:, None]
    a = spec.a
    d = np.diag(a)[:, None]
    h = grid.spacing[0]
    M = np.full(grid.size, h)
    M[[0, -1]] = h / 2
    zero = np.zeros((spec.n, 1))

    def residual(w):
        u = np.exp(w)
        uf = 0.5 * (u[:, 1:] + u[:, :-1])
        gu = np.diff(u, axis=1) / h
        gw = np.diff(w, axis=1) / h
        # quadratic Onsager part: a_ij uf_i uf_j off the diagonal, (sum_k a_ik uf_k + a_ii uf_i) uf_i on it
        B1 = a[:, :, None] * uf[:, None, :] * uf[None, :, :]
        diag = (a @ uf + d * uf) * uf
        idx = np.arange(spec.n)
        B1[idx, idx] = diag
        F = a0 * gu + np.einsum("ijF,jF->iF", B1, gw)
        Fp = np.concatenate([zero, F, zero], axis=1)
        gp = np.concatenate([zero, gw, zero], axis=1)
        div = np.diff(Fp, axis=1) / M
        lap = np.diff(gp, axis=1) / M
        return (u - u_prev) / tau - div + eps * (w - lap), u

    w = np.log(u_prev)
    step = 1e-3 * tau
    for _ in range(iterations):
        r, u = residual(w)
        w = w - step * r / u
    return np.exp(w), float(np.max(np.abs(residual(w)[0])))


def test_criterion_08_newton_oracle(criterion):
    sc = preset("skt2").with_grid((8,))
    p = sc.params.replace(tau=1e-2, t_end=1e-2)
    u0 = sc.initial_values()
    w_next, rep = newton_solve(np.log(u0), np.log(u0), p, sc.system, sc.grid)
    u_oracle, oracle_res = _oracle_step(sc.system, sc.grid, u0, p.tau, p.eps)
    diff = float(np.max(np.abs(np.exp(w_next) - u_oracle)))
    ok = diff <= 1e-8
    criterion(8, ok, f"max |u_newton - u_oracle| = {diff:.2e} (Newton {rep.newton_iters} iters, "
                     f"oracle residual {oracle_res:.1e})")


def test_criterion_09_defect_trend(criterion, skt2_run):
    _, traj, _ = skt2_run
    top = traj.max_density_sum
    levels = [top / 8, top / 4, top / 2, top]
    ests = defect_ladder(traj, levels)
    totals = np.array([e.totals for e in ests])  # (levels, species)
    mono = bool(np.all(totals[1:] <= totals[:-1] * 1.05))
    zero_beyond = all(np.all(e.totals == 0.0) for e in ests if 2 * e.L > top)
    nonzero_start = bool(np.all(totals[0] > 0))
    ok = mono and zero_beyond and nonzero_start
    rows = "; ".join(f"L={e.L:.3f}: {np.array2string(e.totals, precision=3)}" for e in ests)
    criterion(9, ok, f"max sum {top:.3f}; {rows}")


def test_criterion_10_renorm_residual(criterion):
    t0 = time.perf_counter()
    T = 0.1
    xi = XiFunction("coord", c=2.5, width=1.0)
    bump = BumpTest((0.3,), 0.3, T)
    res = []
    for N, steps in ((9, 10), (17, 20), (33, 40), (65, 80)):
        g = Grid.interval(N)
        traj = march(HEAT, g, np.atleast_2d(_heat_exact(g.coords[:, 0], 0.0)), SchemeParams(tau=T / steps, t_end=T))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationInactiveWarning)
            res.append(renorm_residual(traj, RenormTestFunction(xi, bump)).residual)
    orders = _orders(res)
    dt = time.perf_counter() - t0
    ok = orders.min() >= 0.8 and dt < 120
    criterion(10, ok, f"residuals {[f'{r:.2e}' for r in res]}, "
                      f"orders {np.round(orders, 3).tolist()}, {dt:.1f}s")


def test_criterion_11_jacobian(criterion):
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(20):
        grid = Grid.interval(9) if k % 2 == 0 else Grid.rectangle(4, 4)
        d = grid.dim
        n = 3
        spec = SystemSpec.simple(
            rng.uniform(0.05, 0.5, n), rng.uniform(0, 2, (n, n)),
            entropy=EntropyParams(rng.uniform(1, 3, n), rng.uniform(-0.5, 0.5, n)),
            drift=DriftSpec.constant(rng.uniform(-20, 20, (n, d))),
            reaction=ReactionSpec.lotka_volterra(rng.uniform(-1, 1, n), rng.uniform(-1, 0.5, (n, n))),
            d=d,
        )
        p = SchemeParams(tau=0.05, t_end=0.05, eps=0.01, delta=0.1, m=1 + k % 2)
        w = rng.normal(scale=0.7, size=(n, grid.size))
        w_prev = rng.normal(scale=0.7, size=(n, grid.size))
        J = assemble_jacobian(w, w_prev, p, spec, grid).toarray()
        h = 1e-6
        fd = np.empty_like(J)
        for c in range(w.size):
            e = np.zeros(w.size)
            e[c] = h
            e = e.reshape(w.shape)
            fd[:, c] = ((assemble_residual(w + e, w_prev, p, spec, grid)
                         - assemble_residual(w - e, w_prev, p, spec, grid)) / (2 * h)).ravel()
        worst = max(worst, float(np.linalg.norm(J - fd) / np.linalg.norm(fd)))
    criterion(11, worst <= 1e-5, f"max relative Frobenius difference {worst:.2e} over 20 states")


def test_criterion_12_determinism(criterion, tmp_path):
    mismatched = []
    compared = 0
    for name in PRESETS:
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            assert cli.main(["run", name, "--out", str(out), "--seed", "7"]) == 0
            assert cli.main(["check", name, "--out", str(out / "check"), "--seed", "7"]) == 0
            outs.append(out)
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.suffix in (".csv", ".json")
                       and p.name != "manifest.json")
        for rel in files:
            compared += 1
            if (outs[0] / rel).read_bytes() != (outs[1] / rel).read_bytes():
                mismatched.append(f"{name}/{rel}")
    criterion(12, not mismatched, f"{compared} artifacts compared, mismatches: {mismatched or 'none'}")
