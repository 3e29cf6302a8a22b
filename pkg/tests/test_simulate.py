"""Tests for the reflected Euler scheme and path serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from refsde import (
    BarrierConfig,
    DriftSpec,
    SimConfig,
    SimulationDivergedError,
    builtin_drift,
    read_path_csv,
    sample_sup_with_drift,
    simulate_fine,
    simulate_path,
    step,
    stream_rng,
    write_path_csv,
)

TWO_SIDED = BarrierConfig.two_sided(0.0, 3.0)


def _const_drift(c):
    return DriftSpec(f"const{c}",
                     lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c))


# --- within-step supremum sampler -------------------------------------------

def test_sample_sup_uniform_one_is_lower_envelope():
    # u = 1 collapses the bridge draw onto max(0, y)
    assert sample_sup_with_drift(0.6, 1.0, 0.5, 0.0, 1.0) == pytest.approx(0.3)
    assert sample_sup_with_drift(-0.6, 1.0, 0.5, 0.0, 1.0) == 0.0


def test_sample_sup_degenerate_sigma_zero():
    # no noise: the supremum of a downward ramp is 0 whatever u says
    assert sample_sup_with_drift(-0.4, 0.0, 0.5, 3.0, 0.2) == 0.0


def test_sample_sup_tail_draw_value():
    # y = 0, sigma = delta = 1, u = e^-2: M = sqrt(-2 ln u)/2 = 1
    m = sample_sup_with_drift(0.0, 1.0, 1.0, 0.0, math.exp(-2.0))
    assert m == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("args", [
    (0.0, 1.0, 1.0, 0.0, 0.0),        # u = 0
    (0.0, 1.0, 1.0, 0.0, 1.5),        # u > 1
    (0.0, 1.0, 0.0, 0.0, 0.5),        # delta = 0
    (0.0, -1.0, 1.0, 0.0, 0.5),       # sigma < 0
    (math.nan, 1.0, 1.0, 0.0, 0.5),   # non-finite input
])
def test_sample_sup_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        sample_sup_with_drift(*args)


@settings(deadline=None, max_examples=300)
@given(st.floats(-3, 3), st.floats(0, 2), st.floats(0.01, 2), st.floats(-3, 3),
       st.floats(1e-6, 1.0))
def test_sample_sup_dominates_endpoint(rate, sigma, delta, w, u):
    y = rate * delta + sigma * w
    m = sample_sup_with_drift(rate, sigma, delta, w, u)
    assert m >= max(0.0, y) - 1e-12


def test_sample_sup_matches_brute_force_distribution():
    # inverse-transform draws vs running maxima of finely simulated ramps
    rng = np.random.default_rng(20260813)
    n, m = 100_000, 2000
    mu, sigma, delta = 0.4, 0.7, 0.9
    dt = delta / m
    state = np.zeros(n)
    run_max = np.zeros(n)
    for _ in range(m):
        state += mu * dt + sigma * rng.normal(0.0, math.sqrt(dt), n)
        np.maximum(run_max, state, out=run_max)
    w = rng.normal(0.0, math.sqrt(delta), n)
    u = 1.0 - rng.random(n)
    draws = np.array([sample_sup_with_drift(mu, sigma, delta, wi, ui)
                      for wi, ui in zip(w, u)])
    stat = ks_2samp(run_max, draws).statistic
    assert stat < 0.02


# --- single step -------------------------------------------------------------

def _cfg(**kw):
    base = dict(drift=_const_drift(1.0), sigma=0.0, barrier=TWO_SIDED,
                n_steps=1, delta=0.05, seed=0)
    base.update(kw)
    return SimConfig(**base)


def test_step_sigma_zero_interior():
    nxt, dl, dr = step(2.9, _cfg(), stream_rng(0))
    assert nxt == pytest.approx(2.95)
    assert dl == 0.0 and dr == 0.0


def test_step_sigma_zero_upper_reflection():
    nxt, dl, dr = step(2.98, _cfg(), stream_rng(0))
    assert nxt == pytest.approx(3.0)
    assert dl == 0.0
    assert dr == pytest.approx(0.03)


def test_step_sigma_zero_lower_reflection_one_sided():
    cfg = _cfg(drift=_const_drift(-1.0), barrier=BarrierConfig.one_sided(0.0))
    nxt, dl, dr = step(0.02, cfg, stream_rng(0))
    assert nxt == pytest.approx(0.0, abs=1e-15)
    assert nxt >= 0.0
    assert dl == pytest.approx(0.03)
    assert dr == 0.0


def test_step_rejects_state_outside_domain():
    with pytest.raises(ValueError):
        step(3.2, _cfg(), stream_rng(0))


def test_step_at_most_one_regulator_fires():
    cfg = _cfg(sigma=0.4, delta=0.01, drift=builtin_drift(1))
    rng = stream_rng(99)
    state = 0.05
    for _ in range(2000):
        state, dl, dr = step(state, cfg, rng)
        assert not (dl > 0.0 and dr > 0.0)
        assert dl >= 0.0 and dr >= 0.0


# --- whole paths --------------------------------------------------------------

def test_simulate_path_zero_steps():
    p = simulate_path(_cfg(n_steps=0, sigma=0.2, seed=5))
    assert p.n_steps == 0
    assert p.x[0] == pytest.approx(1.5)  # two-sided default start: midpoint
    assert p.l_reg[0] == 0.0 and p.r_reg[0] == 0.0


def test_one_sided_default_start():
    cfg = _cfg(n_steps=0, barrier=BarrierConfig.one_sided(0.5))
    assert simulate_path(cfg).x[0] == pytest.approx(1.5)  # lower + 1


def test_simulate_path_deterministic_ramp_onto_upper_barrier():
    p = simulate_path(_cfg(n_steps=8, delta=0.5, x0=0.0))
    # drift 1, step 0.5: reaches the barrier at step 6, then sticks
    assert p.x[6] == 3.0
    assert np.all(p.x[6:] == 3.0)
    assert np.all(p.x[:6] == 0.5 * np.arange(6))
    assert p.r_reg[-1] == 1.0
    assert np.all(p.l_reg == 0.0)
    assert p.times[-1] == pytest.approx(4.0)


def test_simulate_path_reproducible():
    cfg = SimConfig(drift=builtin_drift(1), sigma=0.2, barrier=TWO_SIDED,
                    n_steps=500, delta=0.01, seed=(3, 1, 4))
    a, b = simulate_path(cfg), simulate_path(cfg)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.l_reg, b.l_reg)
    np.testing.assert_array_equal(a.r_reg, b.r_reg)
    assert a.seed == (3, 1, 4)


def test_distinct_seeds_give_distinct_paths():
    cfg1 = _cfg(sigma=0.2, n_steps=50, seed=1)
    cfg2 = _cfg(sigma=0.2, n_steps=50, seed=2)
    assert not np.array_equal(simulate_path(cfg1).x, simulate_path(cfg2).x)


def test_burn_in_discards_prefix_but_keeps_grid():
    cfg = SimConfig(drift=builtin_drift(2), sigma=0.2, barrier=TWO_SIDED,
                    n_steps=50, delta=0.01, seed=9, burn_in=200)
    p = simulate_path(cfg)
    assert p.times[0] == 0.0
    assert p.n_steps == 50
    assert p.l_reg[0] == 0.0 and p.r_reg[0] == 0.0
    # the recorded start is the state after the burn-in, not x0
    plain = simulate_path(SimConfig(drift=builtin_drift(2), sigma=0.2,
                                    barrier=TWO_SIDED, n_steps=50, delta=0.01,
                                    seed=9))
    assert p.x[0] != plain.x[0]


def test_simulate_fine_refine_one_is_simulate_path():
    cfg = SimConfig(drift=builtin_drift(2), sigma=0.2, barrier=TWO_SIDED,
                    n_steps=200, delta=0.02, seed=11)
    a, b = simulate_path(cfg), simulate_fine(cfg, 1)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.l_reg, b.l_reg)
    np.testing.assert_array_equal(a.r_reg, b.r_reg)
    np.testing.assert_array_equal(a.times, b.times)


def test_simulate_fine_grid_geometry():
    cfg = SimConfig(drift=builtin_drift(1), sigma=0.2, barrier=TWO_SIDED,
                    n_steps=100, delta=0.05, seed=2)
    p = simulate_fine(cfg, 10)
    assert p.x.shape == (1001,)
    assert p.delta == pytest.approx(0.005)
    assert p.times[-1] == pytest.approx(100 * 0.05, rel=1e-12)


def test_simulate_fine_sigma_zero_agrees_on_shared_times():
    # constant drift makes Euler exact, so refinement changes nothing
    cfg = _cfg(n_steps=8, delta=0.5, x0=0.0)
    coarse = simulate_path(cfg)
    fine = simulate_fine(cfg, 4)
    np.testing.assert_allclose(fine.x[::4], coarse.x, atol=1e-12)
    np.testing.assert_allclose(fine.l_reg[::4], coarse.l_reg, atol=1e-12)
    np.testing.assert_allclose(fine.r_reg[::4], coarse.r_reg, atol=1e-12)


@pytest.mark.parametrize("refine", [0, -3, 2.5])
def test_simulate_fine_rejects_bad_refine(refine):
    with pytest.raises(ValueError):
        simulate_fine(_cfg(), refine)


def test_divergence_reports_step_index():
    bad = DriftSpec("exploder",
                    lambda x: 1e100 * (np.asarray(x, dtype=float) + 1.0))
    cfg = SimConfig(drift=bad, sigma=0.0, barrier=BarrierConfig.one_sided(0.0),
                    n_steps=5, delta=0.1, x0=1.0, seed=0)
    with np.errstate(over="ignore"):
        with pytest.raises(SimulationDivergedError) as ei:
            simulate_path(cfg)
    assert ei.value.step_index == 1


def _reflection_gap_violations(p, thresh):
    # regulator increments should only fire with the state near the barrier
    dl = np.diff(p.l_reg)
    dr = np.diff(p.r_reg)
    lo_pair = np.minimum(p.x[:-1], p.x[1:])
    hi_pair = np.maximum(p.x[:-1], p.x[1:])
    bad = int(np.sum((dl > 1e-10) & (lo_pair > p.barrier.lower + thresh)))
    if p.barrier.mode == "two_sided":
        bad += int(np.sum((dr > 1e-10) & (hi_pair < p.barrier.upper - thresh)))
    return bad


def test_reflection_increments_localized_at_barriers():
    thresh = 4 * 0.2 * math.sqrt(0.01)
    up = SimConfig(drift=builtin_drift(2), sigma=0.2, barrier=TWO_SIDED,
                   n_steps=20_000, delta=0.01, seed=101)
    p = simulate_path(up)
    assert p.r_reg[-1] > 0.0  # the upper barrier is actually exercised
    assert _reflection_gap_violations(p, thresh) == 0
    down = SimConfig(drift=_const_drift(-1.0), sigma=0.2,
                     barrier=BarrierConfig.one_sided(0.0), n_steps=20_000,
                     delta=0.01, x0=0.5, seed=102)
    q = simulate_path(down)
    assert q.l_reg[-1] > 0.0
    assert _reflection_gap_violations(q, thresh) == 0


# --- CSV round trips ----------------------------------------------------------

def test_path_csv_roundtrip(tmp_path):
    cfg = SimConfig(drift=builtin_drift(2), sigma=0.2, barrier=TWO_SIDED,
                    n_steps=300, delta=0.01, seed=(8, 2))
    p = simulate_path(cfg)
    out = tmp_path / "path.csv"
    write_path_csv(p, str(out))
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed=8,2"
    assert lines[1] == "t,x,l_reg,r_reg"
    assert len(lines) == 303
    q = read_path_csv(str(out), sigma=0.2, barrier=TWO_SIDED)
    np.testing.assert_array_equal(p.x, q.x)  # %.17g survives the round trip
    np.testing.assert_array_equal(p.l_reg, q.l_reg)
    np.testing.assert_array_equal(p.r_reg, q.r_reg)
    assert q.delta == p.delta  # inferred from the time column
    assert q.seed == (8, 2)


def test_path_csv_int_seed_and_delta_override(tmp_path):
    p = simulate_path(_cfg(n_steps=4, sigma=0.2, seed=7, delta=0.25))
    out = tmp_path / "p.csv"
    write_path_csv(p, str(out))
    q = read_path_csv(str(out), sigma=0.2, barrier=TWO_SIDED, delta=0.25)
    assert q.seed == 7
    assert q.delta == 0.25


def test_read_path_csv_rejects_empty(tmp_path):
    f = tmp_path / "empty.csv"
    f.write_text("# seed=0\nt,x,l_reg,r_reg\n")
    with pytest.raises(ValueError):
        read_path_csv(str(f), sigma=0.2, barrier=TWO_SIDED)
