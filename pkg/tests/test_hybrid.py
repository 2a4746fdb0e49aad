import math

import numpy as np
import pytest
from scipy import stats

from hybridsim import (
    HybridConfig,
    HybridStreams,
    IntensityBoundExceeded,
    gene_burst_network,
    hybrid_simulate,
    parse_network,
    partition_reactions,
)
from hybridsim.hybrid import (
    classify_mark,
    diffusion_step,
    draw_reference_process,
    jump_step,
    mark_layout,
    merged_grid,
    next_reference_jump,
    simulate_reference,
)
from hybridsim.network import Partition
from hybridsim.trajectory import Diagnostics


@pytest.fixture(scope="module")
def net():
    return gene_burst_network()


@pytest.fixture(scope="module")
def part(net):
    return partition_reactions(net)


def gstate(net, s1, s2, x1, x2):
    return net.state_from_vector([s1, s2, x1, x2])


# ---------------------------------------------------------------------------
# marks and thinning


def test_mark_layout_examples(net, part):
    lay = mark_layout(net, part, gstate(net, 1, 0, 1000, 200), 1.5)
    assert lay.bounds.tolist() == [0, 0.5, 0.5, 1.5]
    assert lay.interval("r2") == (0.5, 0.5)
    lay = mark_layout(net, part, gstate(net, 0, 1, 1000, 200), 1.5)
    assert lay.bounds.tolist() == [0, 0, 0.5, 0.5]
    assert lay.total == 0.5


def test_mark_layout_bound(net, part):
    with pytest.raises(IntensityBoundExceeded, match="intensity bound exceeded") as err:
        mark_layout(net, part, gstate(net, 1, 0, 1000, 200), 1.0)
    assert err.value.total == pytest.approx(1.5)
    assert err.value.lambda_max == 1.0


def test_classify_mark(net, part):
    lay = mark_layout(net, part, gstate(net, 1, 0, 1000, 200), 2.0)
    assert classify_mark(lay, 0.3) == "r1"
    assert classify_mark(lay, 0.7) == "r3"
    assert classify_mark(lay, 0.5) == "r3"
    assert classify_mark(lay, 1.7) is None


def test_next_reference_jump_statistics():
    rng = np.random.default_rng(7)
    n = 100_000
    draws = [next_reference_jump(rng, 1.5, 5.0) for _ in range(n)]
    gaps = np.array([d.tau - 5.0 for d in draws])
    marks = np.array([d.z for d in draws])
    assert np.all(gaps > 0)
    assert abs(gaps.mean() - 2 / 3) < 3 * (2 / 3) / math.sqrt(n)
    assert np.all((marks >= 0) & (marks < 1.5))
    assert stats.kstest(marks, stats.uniform(0, 1.5).cdf).pvalue > 0.01


def test_reference_process_batch():
    times, marks = draw_reference_process(np.random.default_rng(1), np.random.default_rng(2), 2.0, 500.0)
    assert np.all(np.diff(times) > 0) and times[-1] <= 500.0 and times[0] > 0
    assert abs(times.size - 1000) < 4 * math.sqrt(1000)
    assert marks.size == times.size and marks.max() < 2.0


# ---------------------------------------------------------------------------
# grid


def test_merged_grid_union():
    g = merged_grid(0.0, 1.0, 0.5, [0.3, 0.7])
    assert g.times.tolist() == [0, 0.3, 0.5, 0.7, 1.0]
    assert g.is_jump.tolist() == [False, True, False, True, False]


def test_merged_grid_plain_and_coincident():
    assert merged_grid(0.0, 1.0, 0.25).times.tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    g = merged_grid(0.0, 1.0, 0.5, [0.5])
    assert g.times.tolist() == [0, 0.5, 1.0]
    assert g.is_jump.tolist() == [False, True, False]


def test_merged_grid_uneven_tail():
    g = merged_grid(0.0, 1.0, 0.3)
    assert np.allclose(g.times, [0, 0.3, 0.6, 0.9, 1.0])


# ---------------------------------------------------------------------------
# single steps


def test_diffusion_step_example(net, part):
    s = gstate(net, 1, 1, 1000, 200)
    new = diffusion_step(net, part, s, 0.1, {"r4": 0.0, "r5": 0.0})
    assert new.x[0] == pytest.approx(990.0)
    assert new.x[1] == pytest.approx(209.8)
    assert new.sigma.tolist() == [1, 1]


def test_diffusion_step_degenerate(net, part):
    s = gstate(net, 1, 1, 1000, 200)
    assert np.array_equal(diffusion_step(net, part, s, 0.0, {}).x, s.x)
    idle = gstate(net, 1, 0, 1000, 0)
    out = diffusion_step(net, part, idle, 0.1, {"r4": 3.0, "r5": -2.0})
    assert np.array_equal(out.x, idle.x)


def test_diffusion_step_clamps(net, part):
    diag = Diagnostics()
    s = gstate(net, 0, 1, 5, 1)
    out = diffusion_step(net, part, s, 1.0, {"r4": 10.0, "r5": 0.0}, diag)
    assert out.x[0] == 0.0 and diag.clamps == 1


def test_jump_step_examples(net, part):
    s = gstate(net, 1, 0, 1000, 200)
    lay = mark_layout(net, part, s, 1.5)
    new, fired = jump_step(net, part, s, 0.3, lay)
    assert fired == "r1" and net.state_vector(new).tolist() == [0, 1, 1000, 200]
    new, fired = jump_step(net, part, s, 1.0, lay)
    assert fired == "r3" and net.state_vector(new).tolist() == [1, 0, 1005, 200]
    diag = Diagnostics()
    lay2 = mark_layout(net, part, s, 2.0)
    new, fired = jump_step(net, part, s, 1.7, lay2, diag)
    assert fired is None and new == s and diag.thinned == 1


# ---------------------------------------------------------------------------
# whole paths


@pytest.mark.parametrize("h, noise_dt", [(0.5, None), (1.0, 0.25), (0.3, None)])
def test_kernel_matches_reference_path(net, part, h, noise_dt):
    cfg = HybridConfig(h=h, lambda_max=1.5, t_max=40.0, noise_dt=noise_dt)
    grid = np.arange(0, 40.5, 2.0)
    fast = hybrid_simulate(net, part, None, cfg, HybridStreams(3, 1), sample_grid=grid, record_events=True)
    slow = simulate_reference(net, part, None, cfg, HybridStreams(3, 1), sample_grid=grid)
    assert np.allclose(fast.values, slow.values, rtol=1e-10, atol=1e-9)
    assert [r for _, r in fast.events] == [r for _, r in slow.events]
    assert fast.diagnostics.thinned == slow.diagnostics.thinned
    assert fast.diagnostics.clamps == slow.diagnostics.clamps


def test_reproducible_and_invariants(net, part):
    cfg = HybridConfig(h=0.1, lambda_max=1.5, t_max=300.0)
    grid = np.arange(0, 301, 1.0)
    a = hybrid_simulate(net, part, None, cfg, HybridStreams(8, 2), sample_grid=grid, record_events=True)
    b = hybrid_simulate(net, part, None, cfg, HybridStreams(8, 2), sample_grid=grid, record_events=True)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values[:, 0] + a.values[:, 1] == 1)
    assert np.all(a.values >= 0)
    # sigma only changes through jump events
    jumps_sigma = [r for _, r in a.events if r in ("r1", "r2")]
    switches = int(np.sum(np.diff(a.values[:, 0]) != 0))
    assert switches <= len(jumps_sigma)
    d = a.diagnostics
    assert d.events + d.thinned > 0 and d.lambda_max_used == 1.5
    assert set(d.events_per_reaction) == set(net.reaction_ids)
    assert d.events_per_reaction["r4"] == 0 and d.events_per_reaction["r5"] == 0


def test_bound_policy_fail(net, part):
    cfg = HybridConfig(h=0.5, lambda_max=1.0, t_max=100.0)
    with pytest.raises(IntensityBoundExceeded):
        hybrid_simulate(net, part, None, cfg, 0)


def test_bound_policy_retry(net, part):
    cfg = HybridConfig(h=0.5, lambda_max=0.75, t_max=50.0, lambda_policy="retry_doubled")
    traj = hybrid_simulate(net, part, None, cfg, 0)
    assert traj.diagnostics.retries == 1
    assert traj.diagnostics.lambda_max_used == 1.5


def test_pure_diffusion_mean_follows_ode():
    net = parse_network(
        "species A continuous init=1000\n"
        "reaction b: 0 -> A rate=1000 group=diffusion\nreaction d: A -> 0 rate=2"
    )
    part = partition_reactions(net, 100.0)
    assert part.jump == ()
    cfg = HybridConfig(h=0.01, lambda_max=1.0, t_max=2.0)
    finals = np.array([hybrid_simulate(net, part, None, cfg, HybridStreams(4, r)).values[-1, 0]
                       for r in range(400)])
    # dA/dt = 1000 - 2A, A(0)=1000 -> A(t) = 500 + 500 exp(-2t)
    ode = 500 + 500 * math.exp(-4.0)
    assert abs(finals.mean() - ode) < 3 * finals.std() / math.sqrt(finals.size) + 1.0


def test_drift_only_matches_euler():
    net = parse_network("species A continuous init=100\nreaction d: A -> 0 rate=1 group=diffusion")
    part = partition_reactions(net)
    cfg = HybridConfig(h=0.1, lambda_max=1.0, t_max=1.0, diffusion_noise=False)
    x = hybrid_simulate(net, part, None, cfg, 0).values[-1, 0]
    assert x == pytest.approx(100 * 0.9**10, rel=1e-12)


def test_no_jump_channels_means_no_arrivals():
    net = parse_network("species A continuous init=100\nreaction d: A -> 0 rate=1 group=diffusion")
    part = Partition.from_sets(net, ["d"])
    traj = hybrid_simulate(net, part, None, HybridConfig(h=0.1, lambda_max=2.0, t_max=5.0), 1)
    assert traj.diagnostics.events == 0
    assert traj.diagnostics.thinned == 0


def test_config_validation():
    with pytest.raises(ValueError):
        HybridConfig(h=0.0, lambda_max=1.0, t_max=1.0)
    with pytest.raises(ValueError):
        HybridConfig(h=0.1, lambda_max=1.0, t_max=1.0, lambda_policy="ignore")
    with pytest.raises(ValueError):
        HybridConfig(h=0.1, lambda_max=1.0, t_max=1.0, noise_dt=0.03)
    assert HybridConfig(h=0.1, lambda_max=1.0, t_max=1.0, noise_dt=0.025).stride == 4


def test_coarse_noise_is_sum_of_fine(net, part):
    # same noise_dt and seed: the h=noise_dt path and the h=4*noise_dt path
    # share arrivals and marks exactly
    a = hybrid_simulate(net, part, None, HybridConfig(h=0.25, lambda_max=1.5, t_max=30.0, noise_dt=0.25),
                        HybridStreams(2, 0), record_events=True)
    b = hybrid_simulate(net, part, None, HybridConfig(h=1.0, lambda_max=1.5, t_max=30.0, noise_dt=0.25),
                        HybridStreams(2, 0), record_events=True)
    ta = [t for t, r in a.events if r in ("r1", "r2")]
    tb = [t for t, r in b.events if r in ("r1", "r2")]
    assert ta == tb
