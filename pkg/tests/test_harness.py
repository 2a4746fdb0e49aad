import json
import math
import warnings

import numpy as np
import pytest

from hybridsim import (
    BatchFailure,
    HybridConfig,
    HybridStreams,
    gene_burst_network,
    hybrid_simulate,
    parse_network,
    partition_reactions,
    ssa_simulate,
)
from hybridsim.harness import (
    convergence_study,
    fit_slope,
    histogram,
    ks_two_sample,
    run_ensemble,
    speedup_benchmark,
)
from hybridsim.streams import ssa_generator


@pytest.fixture(scope="module")
def net():
    return gene_burst_network()


CFG = HybridConfig(h=0.5, lambda_max=1.5, t_max=50.0)


# ---------------------------------------------------------------------------
# ensembles


def test_single_replicate_equals_simulate(net):
    ens = run_ensemble(net, "ssa", None, 50.0, 1, 7)
    assert np.array_equal(ens.final_values[0], ssa_simulate(net, None, 50.0, ssa_generator(7, 0)).values[-1])
    ens = run_ensemble(net, "hybrid", None, 50.0, 1, 7, config=CFG)
    direct = hybrid_simulate(net, partition_reactions(net), None, CFG, HybridStreams(7, 0))
    assert np.array_equal(ens.final_values[0], direct.values[-1])


def test_parallelism_does_not_change_results(net):
    a = run_ensemble(net, "hybrid", None, 50.0, 12, 3, parallelism=1, config=CFG)
    b = run_ensemble(net, "hybrid", None, 50.0, 12, 3, parallelism=3, config=CFG)
    assert np.array_equal(a.final_values, b.final_values)
    assert a.replicate_ids.tolist() == list(range(12))


def test_ensemble_outputs(net, tmp_path):
    ens = run_ensemble(net, "ssa", None, 20.0, 5, 1)
    assert len(ens.final_states) == 5
    assert all(s.t == 20.0 for s in ens.final_states)
    ens.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "replicate,S1,S2,S3,S4" and len(lines) == 6
    ens.write_stats(tmp_path / "s.json")
    st = json.loads((tmp_path / "s.json").read_text())
    assert st["engine"] == "ssa" and st["T"] == 20.0 and st["replicates"] == 5
    assert set(st["species"]["S3"]) == {"mean", "variance"}
    assert st["wall_time"] > 0


def test_batch_failure_threshold(net):
    bad = HybridConfig(h=0.5, lambda_max=1.0, t_max=50.0)
    with pytest.raises(BatchFailure) as err:
        run_ensemble(net, "hybrid", None, 50.0, 4, 0, config=bad)
    assert len(err.value.failures) == 4


def test_failures_tolerated_below_threshold():
    # a path fails when A reaches 3; rare enough to stay under 1%
    net = parse_network(
        "species A discrete init=0\nreaction b: 0 -> A rate=0.004\nreaction c: A -> 2 A rate=1"
    )
    cfg = HybridConfig(h=1.0, lambda_max=1.5, t_max=1.0)
    ens = run_ensemble(net, "hybrid", None, 1.0, 2000, 5, config=cfg)
    assert ens.replicates + len(ens.failures) == 2000
    assert len(ens.failures) <= 20


def test_diffusion_only_engine():
    net = parse_network("species A continuous init=500\nreaction d: A -> 0 rate=1")
    ens = run_ensemble(net, "diffusion_only", None, 1.0, 3, 0, config=HybridConfig(h=0.1, lambda_max=1.0, t_max=1.0))
    assert ens.replicates == 3 and ens.engine == "diffusion_only"


def test_ensemble_validation(net):
    with pytest.raises(ValueError):
        run_ensemble(net, "ssa", None, 1.0, 0, 0)
    with pytest.raises(ValueError):
        run_ensemble(net, "tau", None, 1.0, 1, 0)
    with pytest.raises(ValueError):
        run_ensemble(net, "hybrid", None, 1.0, 1, 0)


# ---------------------------------------------------------------------------
# histogram and KS


def test_histogram_examples():
    _, counts, freq = histogram([1, 1, 2], bins=2)
    assert counts.tolist() == [2, 1]
    assert np.allclose(freq, [2 / 3, 1 / 3])
    _, counts, _ = histogram([4.0] * 7, bins=5)
    assert np.count_nonzero(counts) == 1 and counts.sum() == 7


def test_histogram_uniform():
    x = np.random.default_rng(0).random(100_000)
    edges, counts, freq = histogram(x, bins=10)
    assert counts.sum() == x.size and freq.sum() == pytest.approx(1.0)
    assert np.all(np.abs(freq - 0.1) < 3 * math.sqrt(0.1 * 0.9 / x.size))


def test_histogram_bin_width():
    edges, counts, _ = histogram([0.0, 0.4, 1.0, 2.2], bin_width=0.5)
    assert edges[0] == 0.0 and edges[-1] >= 2.2
    assert counts.sum() == 4
    with pytest.raises(ValueError):
        histogram([], bins=3)


def test_ks_examples():
    assert ks_two_sample([1, 2, 3], [1, 2, 3])[0] == 0
    assert ks_two_sample([1, 2], [5, 6, 7])[0] == 1
    assert ks_two_sample([1, 2, 3], [1, 2, 4])[0] == pytest.approx(1 / 3)


def test_ks_symmetry_and_invariance():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=300), rng.normal(0.1, 1.0, size=400)
    d1, p1 = ks_two_sample(a, b)
    d2, p2 = ks_two_sample(b, a)
    assert d1 == d2 and p1 == p2
    d3, _ = ks_two_sample(np.exp(a), np.exp(b))
    assert d3 == d1


def test_ks_matches_scipy_statistic():
    from scipy.stats import ks_2samp

    rng = np.random.default_rng(4)
    a, b = rng.normal(size=500), rng.normal(size=700)
    assert ks_two_sample(a, b)[0] == pytest.approx(ks_2samp(a, b).statistic)


# ---------------------------------------------------------------------------
# convergence


def _ou_net():
    return parse_network(
        "species A continuous init=100\n"
        "reaction b: 0 -> A rate=100 group=diffusion\nreaction d: A -> 0 rate=1 group=diffusion"
    )


def test_convergence_reference_row_is_zero():
    net = _ou_net()
    part = partition_reactions(net)
    h = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.00625]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        tab = convergence_study(net, part, None, 0.5, h, 20, 1)
    assert tab.mse[-1] == 0 and tab.mse[-2] == 0
    assert np.all(np.diff(tab.h) <= 0) and np.all(tab.mse >= 0)
    assert tab.n.tolist() == [20] * 6


def test_convergence_input_validation():
    net = _ou_net()
    part = partition_reactions(net)
    with pytest.raises(ValueError, match="dyadic"):
        convergence_study(net, part, None, 1.0, [0.3, 0.1, 0.01], 2, 0)
    with pytest.raises(ValueError, match="decade"):
        convergence_study(net, part, None, 1.0, [0.4, 0.2, 0.1], 2, 0)


def test_drift_only_slope_is_two():
    # reference well below the fitted rows, so (h - h_ref)^2 ~ h^2
    net = parse_network("species A continuous init=100\nreaction d: 2 A -> 0 rate=0.01 group=diffusion")
    h = [0.2, 0.1, 0.05, 0.025, 0.2 / 256]
    tab = convergence_study(net, partition_reactions(net), None, 1.0, h, 1, 0, diffusion_noise=False)
    assert 1.7 <= tab.slope <= 2.3


def test_drift_only_converges_to_ode():
    # dA/dt = -A: Euler gives (1 - h)^(1/h) -> exp(-1), error O(h)
    net = parse_network("species A continuous init=100\nreaction d: A -> 0 rate=1 group=diffusion")
    part = partition_reactions(net)
    errs = []
    hs = [0.1, 0.05, 0.025, 0.0125]
    for h in hs:
        cfg = HybridConfig(h=h, lambda_max=1.0, t_max=1.0, diffusion_noise=False)
        x = hybrid_simulate(net, part, None, cfg, 0).values[-1, 0]
        errs.append((x - 100 * math.exp(-1.0)) ** 2)
    assert 1.8 <= fit_slope(hs, errs) <= 2.2


def test_fit_slope():
    h = np.array([1.0, 0.5, 0.25])
    assert fit_slope(h, 3 * h**2) == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# benchmark


def test_benchmark_table(net, tmp_path):
    tab = speedup_benchmark(net, None, 20.0, [0.5, 1.0], 2, 0, 1.5)
    assert tab.t_ssa > 0 and np.all(tab.t_hybrid > 0)
    assert np.allclose(tab.ratio, tab.t_ssa / tab.t_hybrid)
    tab.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "h,t_ssa,t_hybrid,ratio"
    with pytest.raises(ValueError):
        speedup_benchmark(net, None, 20.0, [0.5], 0, 0, 1.5)
