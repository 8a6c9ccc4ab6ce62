"""Jump sampling, compensator quadrature, and compensated-increment tests."""

import numpy as np
import pytest

from plaplace_levy import (
    Field,
    Grid,
    InfiniteMassError,
    LevyModel,
    compensated_increment,
    eta_linear,
    eta_zero,
    isometry_rhs,
    sample_prm,
)


def unit_delta_model(lam=1.0, coef=0.5, lam_star=0.5):
    return LevyModel(
        eta=eta_linear(coef), lambda_star=lam_star, point_masses=((1.0, lam),)
    )


def test_validate_accepts_reference_model():
    unit_delta_model().validate()


def test_validate_rejects_bad_lambda_star():
    with pytest.raises(ValueError, match="A3"):
        LevyModel(eta=eta_linear(0.5), lambda_star=1.5, point_masses=((1.0, 1.0),)).validate()


def test_validate_rejects_eta_without_zero_fixpoint():
    bad = LevyModel(
        eta=lambda u, z: u + 1.0, lambda_star=0.5, point_masses=((1.0, 1.0),)
    )
    with pytest.raises(ValueError, match="A3"):
        bad.validate()


def test_validate_rejects_eta_exceeding_lipschitz():
    bad = LevyModel(
        eta=eta_linear(0.9), lambda_star=0.3, point_masses=((1.0, 1.0),)
    )
    with pytest.raises(ValueError, match="A3"):
        bad.validate()


def test_c_eta_point_masses():
    m = LevyModel(
        eta=eta_linear(0.2),
        lambda_star=0.5,
        point_masses=((0.5, 2.0), (3.0, 0.25)),
    )
    # 2 * min(1, 0.25) + 0.25 * min(1, 9)
    assert m.c_eta == pytest.approx(2 * 0.25 + 0.25 * 1.0)


def test_c_eta_density_quadrature():
    # density 1 on [eps, 1] (one-sided mass comes out of the symmetric rule)
    m = LevyModel(
        eta=eta_linear(0.2),
        lambda_star=0.5,
        density=lambda z: 1.0 if z > 0 else 0.0,
        eps=1e-3,
        z_max=1.0,
    )
    exact = (1.0**3 - 1e-9) / 3.0  # integral of z^2 over [1e-3, 1]
    assert m.c_eta == pytest.approx(exact, rel=1e-4)
    assert m.total_mass == pytest.approx(1.0 - 1e-3, rel=1e-6)


def test_density_without_truncation_rejected():
    m = LevyModel(
        eta=eta_linear(0.2), lambda_star=0.5, density=lambda z: z**-2, eps=0.0
    )
    with pytest.raises(InfiniteMassError):
        m.total_mass


def test_sample_prm_rate_one_mean_count():
    model = unit_delta_model(lam=1.0)
    counts = [sample_prm(model, 1.0, 0.1, seed).jump_count() for seed in range(100_000)]
    assert np.mean(counts) == pytest.approx(1.0, abs=0.02)


def test_sample_prm_zero_mass_empty():
    model = LevyModel(eta=eta_zero(), lambda_star=0.5, point_masses=())
    path = sample_prm(model, 1.0, 0.25, seed=5)
    assert path.jump_count() == 0


def test_sample_prm_deterministic_in_seed():
    model = unit_delta_model(lam=4.0)
    a = sample_prm(model, 1.0, 0.125, seed=99)
    b = sample_prm(model, 1.0, 0.125, seed=99)
    for (ta, ma), (tb, mb) in zip(a.events, b.events):
        assert np.array_equal(ta, tb) and np.array_equal(ma, mb)
    c = sample_prm(model, 1.0, 0.125, seed=100)
    assert any(
        not np.array_equal(ta, tc)
        for (ta, _), (tc, _) in zip(a.events, c.events)
    )


def test_sample_prm_times_within_step_and_increasing():
    model = unit_delta_model(lam=30.0)
    path = sample_prm(model, 1.0, 0.25, seed=1)
    for k, (times, marks) in enumerate(path.events):
        assert len(times) == len(marks)
        if len(times):
            assert np.all(np.diff(times) > 0)
            assert times[0] > k * 0.25 and times[-1] <= (k + 1) * 0.25 + 1e-15
    with pytest.raises(ValueError):
        sample_prm(model, 1.0, 0.3, seed=1)  # T/dt not integral


def test_compensated_increment_zero_field():
    g = Grid(1, 8)
    model = unit_delta_model()
    path = sample_prm(model, 0.5, 0.25, seed=2)
    inc = compensated_increment(model, Field.zeros(g), path, 0)
    assert np.all(inc.values == 0.0)
    with pytest.raises(IndexError):
        compensated_increment(model, Field.zeros(g), path, 2)


def test_compensated_increment_martingale_mean_zero():
    g = Grid(1, 8)
    u = Field.from_function(g, lambda x: np.sin(np.pi * x))
    model = unit_delta_model(lam=2.0)
    dt = 0.05
    n = 40_000
    node = g.n_cells // 2
    acc = np.zeros(n)
    for seed in range(n):
        path = sample_prm(model, dt, dt, seed)
        acc[seed] = compensated_increment(model, u, path, 0).values[node]
    se = acc.std() / np.sqrt(n)
    assert abs(acc.mean()) <= 3 * se


def test_compensated_increment_isometry_variance():
    g = Grid(1, 8)
    u = Field.from_function(g, lambda x: np.sin(np.pi * x))
    model = unit_delta_model(lam=1.0, coef=0.5)
    dt = 0.01
    n = 30_000
    vals = np.empty(n)
    for seed in range(n):
        path = sample_prm(model, dt, dt, seed)
        inc = compensated_increment(model, u, path, 0)
        idx = g.interior_nodes
        vals[seed] = np.sum(inc.flat[idx] ** 2) * g.cell_weight
    rhs = isometry_rhs(model, u, dt)
    from plaplace_levy.grid import l2_norm

    assert rhs == pytest.approx(dt * 1.0 * 0.25 * l2_norm(u) ** 2)
    assert np.mean(vals) == pytest.approx(rhs, rel=0.05)


def test_linear_growth_bound():
    rng = np.random.default_rng(31)
    model = unit_delta_model(coef=0.5, lam_star=0.5)
    u = rng.normal(0, 3, 500)
    for z in rng.uniform(-4, 4, 10):
        bound = model.lambda_star * np.abs(u) * min(1.0, abs(z))
        assert np.all(np.abs(model.eta(u, z)) <= bound + 1e-12)
