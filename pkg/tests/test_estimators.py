import numpy as np
import pytest

from psde import (
    DegenerateObjective,
    DiffusionSpec,
    LinearlyDependentDerivatives,
    NoInteriorCube,
    ParameterDomain,
    ParameterOutOfDomain,
    SearchConfig,
    SignalModel,
    default_dyadic_level,
    dyadic_discretize,
    estimate_pipeline,
    fisher_quadrature,
    grid_mle,
    mde_asymptotic_covariance,
    mde_estimate,
    noise_increments,
    one_step,
    psi_hat,
    psi_theoretical,
    simulate_path,
)
from psde.estimators import nelder_mead
from psde.simulate import _path_from_increments, _simulate_batch, signal_table

from conftest import PERIOD, constant_signal, linear_signal

OU_HALF = dict(b=lambda x: -x, sigma=lambda x: 0.5, period=PERIOD)


# ---------------------------------------------------------------------------
# Psi curves
# ---------------------------------------------------------------------------

def test_psi_hat_deterministic_drift():
    # b = 0, no noise, S = c: PsiHat(s) = c*s exactly on the grid
    sig = constant_signal(0.75)
    dif = DiffusionSpec(b=lambda x: 0.0, sigma=lambda x: 1.0, period=PERIOD)
    p = _path_from_increments(sig, dif, [5.0], np.zeros(4 * 512), 512)
    emp = psi_hat(p, dif)
    assert emp.samples[0] == 0.0
    assert np.array_equal(emp.samples, 0.75 * emp.grid())


def test_psi_representation_identity(triangular, ou_half):
    # PsiHat - Psi_theta == segment-averaged cumulative noise, step by step
    theta = np.array([3.0])
    n, M = 30, 512
    p = simulate_path(triangular, ou_half, theta, n, M, seed=5)
    emp = psi_hat(p, ou_half)
    psi_t = psi_theoretical(triangular, theta, emp.grid())
    db = noise_increments(p, triangular, ou_half, theta)
    noise_cum = np.concatenate(
        [np.zeros((n, 1)), np.cumsum((0.5 * db).reshape(n, M), axis=1)], axis=1
    )
    rhs = noise_cum.mean(axis=0)
    assert np.max(np.abs((emp.samples - psi_t) - rhs)) <= 1e-10


def test_psi_variance_profile(triangular, ou_half):
    # MC oracle: n * Var(PsiHat(s) - Psi_theta(s)) -> sigma^2 * s for constant sigma
    theta = np.array([3.0])
    n, M, reps = 4, 128, 2000
    paths, ok = _simulate_batch(triangular, ou_half, theta, n, M, 404, list(range(reps)))
    grid = paths[0].dt * np.arange(M + 1)
    psi_t = psi_theoretical(triangular, theta, grid)
    devs = np.array([psi_hat(p, ou_half).samples - psi_t for p in paths])
    for j in [M // 4, M // 2, M]:
        v = n * np.var(devs[:, j], ddof=1)
        target = 0.25 * grid[j]
        assert abs(v - target) / target < 0.15


def test_psi_theoretical_cases(triangular, phase_amp):
    grid = np.linspace(0.0, PERIOD, 513)
    zero = constant_signal(0.0)
    assert np.array_equal(psi_theoretical(zero, [5.0], grid), np.zeros(513))
    # unit triangle area, up to the left-endpoint-sum discretization
    psi = psi_theoretical(triangular, [3.0], grid)
    assert psi[0] == 0.0
    assert abs(psi[-1] - 1.0) < 5e-4
    # full-period integral does not depend on the phase coordinate
    a = psi_theoretical(phase_amp, [2.0, 1.5], grid)[-1]
    b = psi_theoretical(phase_amp, [7.3, 1.5], grid)[-1]
    assert abs(a - b) < 1e-9
    with pytest.raises(ParameterOutOfDomain):
        psi_theoretical(triangular, [10.0], grid)


# ---------------------------------------------------------------------------
# MDE
# ---------------------------------------------------------------------------

def test_mde_zero_noise_recovery(triangular):
    dif = DiffusionSpec(**OU_HALF)
    p = _path_from_increments(triangular, dif, [3.0], np.zeros(20 * 512), 512)
    theta, diag = mde_estimate(p, triangular, dif)
    assert abs(theta[0] - 3.0) < 1e-6
    assert diag.objective < 1e-12
    assert not diag.boundary_hit


def test_mde_statistical_accuracy(triangular, ou_half):
    # spread matches the asymptotic sandwich at n=200: within 3 sd in >= 99%
    theta = np.array([3.0])
    n, reps = 200, 300
    target = mde_asymptotic_covariance(triangular, ou_half, theta)[0, 0]
    band = 3.0 * np.sqrt(target / n)
    hits = 0
    for lo in range(0, reps, 60):
        paths, ok = _simulate_batch(triangular, ou_half, theta, n, 512, 515, list(range(lo, lo + 60)))
        for p in paths:
            est, _ = mde_estimate(p, triangular, ou_half)
            hits += abs(est[0] - 3.0) <= band
    assert hits / reps >= 0.99


def test_mde_objective_brute_force(triangular, ou_half):
    # the vectorized trapezoid objective equals an explicit double loop
    p = simulate_path(triangular, ou_half, [3.0], 10, 128, seed=33)
    emp = psi_hat(p, ou_half)
    M, h = p.steps_per_period, p.dt
    zeta = np.array([4.2])
    tab = signal_table(triangular, zeta, M, h)
    psi_z = np.concatenate([[0.0], np.cumsum(tab) * h])
    brute = 0.0
    for j in range(M + 1):
        w = h / 2 if j in (0, M) else h
        brute += w * (emp.samples[j] - psi_z[j]) ** 2
    w_trap = np.full(M + 1, h)
    w_trap[0] = w_trap[-1] = h / 2
    vec = float(w_trap @ (emp.samples - psi_z) ** 2)
    assert abs(vec - brute) <= 1e-12 * (1.0 + brute)


def test_mde_degenerate_objective(ou_half):
    p = simulate_path(constant_signal(0.3), ou_half, [5.0], 5, 128, seed=3)
    with pytest.raises(DegenerateObjective):
        mde_estimate(p, constant_signal(0.3), ou_half)


def test_mde_never_worse_than_coarse_grid(triangular, ou_half):
    p = simulate_path(triangular, ou_half, [3.0], 25, 512, seed=71)
    emp = psi_hat(p, ou_half)
    M, h = p.steps_per_period, p.dt
    w_trap = np.full(M + 1, h)
    w_trap[0] = w_trap[-1] = h / 2

    def objective(z):
        tab = signal_table(triangular, np.atleast_1d(z), M, h)
        psi_z = np.concatenate([[0.0], np.cumsum(tab) * h])
        return float(w_trap @ (emp.samples - psi_z) ** 2)

    est, diag = mde_estimate(p, triangular, ou_half)
    centers = (np.arange(32) + 0.5) * PERIOD / 32
    assert diag.objective <= min(objective(c) for c in centers) + 1e-15


def test_mde_search_bounds(triangular, ou_half):
    p = simulate_path(triangular, ou_half, [3.0], 25, 512, seed=71)
    est, _ = mde_estimate(p, triangular, ou_half, SearchConfig(bounds=((2.0, 4.0),)))
    assert 2.0 < est[0] < 4.0


# ---------------------------------------------------------------------------
# Dyadic discretization
# ---------------------------------------------------------------------------

def test_dyadic_examples(triangular):
    dom = triangular.domain
    assert dyadic_discretize([3.14159], 4, domain=dom)[0] == 3.125
    # idempotence on already-dyadic points
    assert dyadic_discretize([3.125], 4, domain=dom)[0] == 3.125
    assert dyadic_discretize([2.984375], 6, domain=dom)[0] == 2.984375


def test_dyadic_distance_bound(phase_amp):
    rng = np.random.default_rng(12)
    dom = phase_amp.domain
    for _ in range(300):
        z = np.array([rng.uniform(0.1, 9.9), rng.uniform(0.1, 50.0)])
        for level in (4, 6, 9):
            d = dyadic_discretize(z, level, domain=dom)
            assert dom.contains(d)
            assert np.linalg.norm(d - z) <= np.sqrt(2) * 2.0 ** (-level)
            assert np.all(np.abs(d * 2.0**level - np.round(d * 2.0**level)) == 0.0)


def test_dyadic_boundary_and_errors():
    dom = ParameterDomain([(0.0, 10.0)])
    # near the lower edge the containing cube pokes outside; nearest interior corner wins
    d = dyadic_discretize([0.01], 4, domain=dom)
    assert d[0] == 0.0625
    thin = ParameterDomain([(0.4, 0.45)])
    with pytest.raises(NoInteriorCube):
        dyadic_discretize([0.42], 4, domain=thin)
    with pytest.raises(ParameterOutOfDomain):
        dyadic_discretize([12.0], 4, domain=dom)
    assert default_dyadic_level(100) == 6
    assert default_dyadic_level(10**7) == 12


# ---------------------------------------------------------------------------
# One-step correction
# ---------------------------------------------------------------------------

def test_one_step_zero_score(triangular):
    dif = DiffusionSpec(**OU_HALF)
    p = _path_from_increments(triangular, dif, [3.0], np.zeros(10 * 512), 512)
    r = one_step(p, triangular, dif, [3.0])
    assert np.array_equal(r.theta, [3.0])
    assert r.in_domain


def test_one_step_moves_with_score_sign(triangular, ou_half):
    from psde import score

    p = simulate_path(triangular, ou_half, [3.0], 50, 512, seed=17)
    start = np.array([2.984375])
    s = score(p, triangular, ou_half, start)
    r = one_step(p, triangular, ou_half, start)
    assert np.sign(r.theta[0] - start[0]) == np.sign(s[0])


def test_one_step_out_of_domain_flag():
    # large injected noise makes the scoring step overshoot the open rectangle
    lin = linear_signal(1.0, bounds=((0.0, 0.5),))
    dif = DiffusionSpec(b=lambda x: 0.0, sigma=lambda x: 1.0, period=PERIOD)
    db = np.full(2 * 128, 0.9)
    p = _path_from_increments(lin, dif, [0.25], db, 128)
    r = one_step(p, lin, dif, [0.25])
    assert not r.in_domain
    assert r.theta[0] > 0.5  # raw value reported, not clipped


def test_one_step_fisher_modes(triangular, ou_half):
    p = simulate_path(triangular, ou_half, [3.0], 50, 512, seed=18)
    a = one_step(p, triangular, ou_half, [2.984375], fisher_mode="quadrature")
    b = one_step(p, triangular, ou_half, [2.984375], fisher_mode="empirical")
    assert a.fisher.provenance == "quadrature"
    assert b.fisher.provenance == "empirical"
    assert abs(a.theta[0] - b.theta[0]) < 1e-3  # informations differ only by Riemann error


def test_one_step_translation_equivariance(triangular):
    # with b = 0 and the per-period noise rotated together with the parameter
    # shift, the one-step estimate shifts by exactly the same amount
    dif = DiffusionSpec(b=lambda x: 0.0, sigma=lambda x: 0.5, period=PERIOD)
    n, M = 40, 512
    rng = np.random.default_rng(25)
    db = np.sqrt(PERIOD / M) * rng.standard_normal(n * M)
    shift_steps = 64  # 1.25 time units on the grid
    delta = shift_steps * (PERIOD / M)

    p1 = _path_from_increments(triangular, dif, [3.0], db, M)
    db2 = np.roll(db.reshape(n, M), shift_steps, axis=1).ravel()
    p2 = _path_from_increments(triangular, dif, [3.0 + delta], db2, M)

    start1 = np.array([2.984375])
    r1 = one_step(p1, triangular, dif, start1)
    r2 = one_step(p2, triangular, dif, start1 + delta)
    assert abs((r2.theta[0] - delta) - r1.theta[0]) < 1e-9


# ---------------------------------------------------------------------------
# MDE limit covariance
# ---------------------------------------------------------------------------

def test_mde_covariance_constant_gradient_closed_form(ou_half):
    # DPsi(s) = c s: Lambda = c^2 T^3/3, Xi = c^2 sigma^2 (2/15) T^5,
    # covariance = sigma^2 (6/5) / (c^2 T)
    c = 0.7
    lin = linear_signal(c)
    got = mde_asymptotic_covariance(lin, ou_half, [5.0])[0, 0]
    expected = 0.25 * 1.2 / (c**2 * PERIOD)
    assert abs(got - expected) / expected < 1e-6


def test_mde_covariance_brute_force_double_sum(ou_half):
    # same-grid double loop reproduces the vectorized Xi quadrature
    c = 0.7
    lin = linear_signal(c)
    n_grid = 128
    got = mde_asymptotic_covariance(lin, ou_half, [5.0], n_grid=n_grid)[0, 0]
    edges = np.linspace(0.0, PERIOD, n_grid + 1)
    dl = np.diff(edges)
    dpsi = np.concatenate([[0.0], np.cumsum(c * dl)])
    w = np.zeros(n_grid + 1)
    w[:-1] += dl / 2
    w[1:] += dl / 2
    lam = float(np.sum(w * dpsi * dpsi))
    xi = 0.0
    phi = 0.25 * edges
    for i in range(n_grid + 1):
        for j in range(n_grid + 1):
            xi += w[i] * w[j] * dpsi[i] * phi[min(i, j)] * dpsi[j]
    assert abs(got - xi / lam**2) <= 1e-10 * abs(got)


def test_mde_covariance_dominates_efficiency_bound(triangular, power2, phase_amp, ou_half, ou_unit):
    # information inequality: sandwich covariance >= I^{-1} (PSD difference)
    for model, dif, theta in [
        (triangular, ou_half, [3.0]),
        (power2, ou_unit, [4.0]),
        (phase_amp, ou_unit, [2.5, 2.0]),
    ]:
        cov = mde_asymptotic_covariance(model, dif, theta)
        inv = fisher_quadrature(model, dif, theta).inverse()
        eigs = np.linalg.eigvalsh(cov - inv)
        assert np.min(eigs) >= -1e-8


def test_mde_covariance_empirical_phi(triangular, ou_half):
    theta = np.array([3.0])
    p = simulate_path(triangular, ou_half, theta, 100, 256, seed=42)
    emp = mde_asymptotic_covariance(triangular, ou_half, theta, phi_mode="empirical", path=p)
    const = mde_asymptotic_covariance(triangular, ou_half, theta)
    # constant sigma: the empirical profile estimates the same sigma^2 * s
    assert abs(emp[0, 0] - const[0, 0]) / const[0, 0] < 0.02


def test_mde_covariance_linear_dependence(ou_unit):
    dom = ParameterDomain([(0.0, 10.0), (0.0, 10.0)])

    def value(z, t):
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        t = np.asarray(t, dtype=np.float64)
        out = np.broadcast_to(z[0] + 2.0 * z[1], t.shape).copy()
        return float(out) if out.ndim == 0 else out

    def gradient(z, t):
        t = np.asarray(t, dtype=np.float64)
        g = np.empty((2,) + t.shape)
        g[0] = 1.0
        g[1] = 2.0
        return g

    degenerate = SignalModel(
        dim=2, domain=dom, value=value, gradient=gradient, period=PERIOD, name="degenerate"
    )
    with pytest.raises(LinearlyDependentDerivatives):
        mde_asymptotic_covariance(degenerate, ou_unit, [1.0, 1.0])


# ---------------------------------------------------------------------------
# Grid MLE
# ---------------------------------------------------------------------------

def test_grid_mle_zero_noise_recovery(triangular):
    dif = DiffusionSpec(**OU_HALF)
    p = _path_from_increments(triangular, dif, [3.0], np.zeros(20 * 512), 512)
    theta, _ = grid_mle(p, triangular, dif)
    assert abs(theta[0] - 3.0) < 1e-6


def test_grid_mle_reference_invariance(triangular, ou_half):
    p = simulate_path(triangular, ou_half, [3.0], 30, 512, seed=57)
    a, _ = grid_mle(p, triangular, ou_half, reference=[2.0])
    b, _ = grid_mle(p, triangular, ou_half, reference=[7.5])
    assert abs(a[0] - b[0]) < 1e-6


# ---------------------------------------------------------------------------
# Pipeline and optimizer
# ---------------------------------------------------------------------------

def test_estimate_pipeline_record(triangular, ou_half):
    p = simulate_path(triangular, ou_half, [3.0], 50, 512, seed=90)
    rec = estimate_pipeline(p, triangular, ou_half, run_grid_mle=True)
    assert triangular.domain.contains(rec.discretized)
    level = default_dyadic_level(50)
    assert rec.discretized[0] * 2.0**level == np.round(rec.discretized[0] * 2.0**level)
    assert rec.fisher_at_discretized.provenance == "quadrature"
    assert rec.grid_mle is not None
    assert abs(rec.one_step[0] - 3.0) < 0.5


def test_nelder_mead_quadratic():
    calls = []

    def f(x):
        calls.append(1)
        return float((x[0] - 1.3) ** 2 + 2.0 * (x[1] + 0.4) ** 2)

    x, fx, iters, n_eval = nelder_mead(f, np.array([0.0, 0.0]), scale=0.5, xtol=1e-10)
    assert np.max(np.abs(x - [1.3, -0.4])) < 1e-8
    assert n_eval == len(calls)


def test_mde_pipeline_two_dimensional(phase_amp, ou_unit):
    # zero-noise recovery in d = 2 (phase and amplitude)
    theta = np.array([2.5, 2.0])
    p = _path_from_increments(phase_amp, ou_unit, theta, np.zeros(20 * 256), 256)
    search = SearchConfig(bounds=((0.0, 10.0), (0.25, 5.0)))
    est, diag = mde_estimate(p, phase_amp, ou_unit, search)
    assert np.max(np.abs(est - theta)) < 1e-5
    rec = estimate_pipeline(p, phase_amp, ou_unit, search=search)
    assert phase_amp.domain.contains(rec.discretized)
    assert np.max(np.abs(rec.one_step - theta)) < 1e-3


def test_fisher_quadrature_empirical_weight(triangular):
    # state-dependent sigma: quadrature against the ergodic weight is close to
    # the path-averaged information from the same path
    from psde import LambdaWeight, empirical_fisher, fisher_quadrature

    dif = DiffusionSpec(b=lambda x: -x, sigma=lambda x: np.sqrt(1.0 + x * x), period=PERIOD)
    theta = [3.0]
    p = simulate_path(triangular, dif, theta, 300, 256, seed=13)
    w = LambdaWeight.empirical(p, dif)
    fq = fisher_quadrature(triangular, dif, theta, weight=w).matrix[0, 0]
    fe = empirical_fisher(p, triangular, dif, theta).matrix[0, 0]
    assert abs(fq - fe) / fe < 0.02
