import numpy as np
import pytest
from scipy import stats

from dtnspeed.errors import ConfigError
from dtnspeed.model_config import default_params, params_from_dict
from dtnspeed.simulator import SimConfig, estimate, initial_field, run_replica


def test_defaults(params):
    cfg = SimConfig(params)
    assert cfg.world_half_width == pytest.approx(17.0)
    assert cfg.time_step == pytest.approx(0.01)
    assert cfg.horizon == pytest.approx(1e4)


@pytest.mark.parametrize("kw", [{"world_half_width": 5.0}, {"time_step": 0.1},
                                {"horizon": -1.0}, {"replicas": 0}])
def test_config_errors(params, kw):
    with pytest.raises(ConfigError):
        SimConfig(params, **kw)


def test_estimate_needs_two_replicas(params):
    with pytest.raises(ConfigError):
        estimate(SimConfig(params, horizon=1.0, replicas=1))


def test_initial_count_is_poisson(params):
    cfg = SimConfig(params)
    counts = np.array([initial_field(cfg, np.random.default_rng(s))[0].size for s in range(200)])
    mean = params.lam * (2 * cfg.world_half_width) ** 2
    assert abs(counts.mean() - mean) < 3 * np.sqrt(mean / 200)


def test_initial_field_placement(window_params):
    cfg = SimConfig(window_params)
    px, py, th, tn = initial_field(cfg, np.random.default_rng(1))
    W = cfg.world_half_width
    assert np.all((px >= 0) & (px < 2 * W) & (py >= 0) & (py < 2 * W))
    assert np.all(window_params.direction_density.pdf(th) > 0)
    assert np.all(tn > 0)


def test_same_seed_bit_identical(params):
    cfg = SimConfig(params, horizon=50.0)
    a, b = run_replica(cfg, 9), run_replica(cfg, 9)
    assert (a.sum_xw, a.sum_xb, a.sum_cost, a.stages) == (b.sum_xw, b.sum_xb, b.sum_cost, b.stages)
    c = run_replica(cfg, 10)
    assert c.sum_x != a.sum_x


def test_event_invariants_short_run(window_params):
    cfg = SimConfig(window_params, horizon=100.0, record_events=True)
    r = run_replica(cfg, 3)
    assert r.transmissions > 0
    ev = r.events
    assert ev.shape == (r.transmissions, 5)
    assert np.all(np.abs(ev[:, 4]) < np.abs(ev[:, 3]))
    assert np.all(window_params.region.contains(ev[:, 1:3]))
    assert r.potential_violations == r.region_violations == 0
    assert r.cost_mismatch == 0.0
    assert r.sum_cost == pytest.approx(np.sum(ev[:, 1] ** 2 + ev[:, 2] ** 2))
    assert r.sum_xw == pytest.approx(ev[:, 1].sum())
    assert np.all(np.diff(ev[:, 0]) >= 0)


def test_empty_field_has_no_transmissions():
    p = params_from_dict({"lambda": 0.0})
    r = run_replica(SimConfig(p, horizon=20.0), 0)
    assert r.n_nodes == 1 and r.transmissions == 0
    assert r.sum_xw == 0.0 and r.sum_cost == 0.0
    assert r.sum_x == r.sum_xb and r.stages >= 1


def test_sparse_uniform_speed_is_zero():
    # a lone carrier with uniform directions has zero mean drift
    p = params_from_dict({"lambda": 1e-3})
    est = estimate(SimConfig(p, horizon=2000.0, replicas=6, seed=4))
    assert abs(est.V_p_hat) <= max(2 * est.V_half_width, 0.02)


def test_half_width_clt_scaling():
    p = default_params()
    e8 = estimate(SimConfig(p, horizon=60.0, replicas=8, seed=1))
    e16 = estimate(SimConfig(p, horizon=60.0, replicas=16, seed=2))
    ratio = e16.V_half_width / e8.V_half_width
    assert 1 / (1.5 * np.sqrt(2)) <= ratio <= 1.5 / np.sqrt(2)


def test_direction_samples_follow_density(window_params):
    r = run_replica(SimConfig(window_params, horizon=500.0, chunk=5.0), 2)
    d = window_params.direction_density
    assert r.direction_samples.size == 10_000
    assert stats.kstest(r.direction_samples, d.cdf).pvalue > 0.01


def test_location_dependent_rule_rejected(params):
    from dtnspeed.model_config import RoutingRule

    rule = RoutingRule(params.rule.boundary, lambda t, x, y: -np.abs(t) + 0 * x, False, "ld",
                       -np.pi)
    with pytest.raises(ConfigError):
        SimConfig(params.replace(rule=rule))
