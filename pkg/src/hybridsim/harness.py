"""Monte Carlo ensembles, distribution comparison, convergence and speedup studies.

Replicate ``i`` of a batch always draws from the substreams derived from
``(master_seed, i)``, so an ensemble is a pure function of its inputs no
matter how the replicates are spread over worker processes.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import kstwobign

from .errors import BatchFailure, HybridSimError
from .exact import ssa_simulate
from .hybrid import HybridConfig, hybrid_simulate
from .network import Partition, ReactionNetwork, State, partition_reactions
from .streams import HybridStreams, ssa_generator

ENGINES = ("ssa", "hybrid", "diffusion_only")
FAILURE_FRACTION = 0.01


def resolve_partition(net: ReactionNetwork, engine: str, partition: Partition | None,
                      h_threshold: float = 100.0) -> Partition | None:
    """Partition used by ``engine``; ``diffusion_only`` puts every reaction
    in the diffusion set (fails if one of them changes a discrete species)."""
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    if engine == "ssa":
        return None
    if engine == "diffusion_only":
        return Partition.from_sets(net, net.reaction_ids)
    return partition if partition is not None else partition_reactions(net, h_threshold)


def simulate_replicate(net: ReactionNetwork, engine: str, s0: State | None, t_max: float,
                       replicate: int, master_seed: int, config: HybridConfig | None = None,
                       partition: Partition | None = None):
    """One replicate of a batch; returns its Trajectory (samples at 0 and t_max)."""
    if engine == "ssa":
        return ssa_simulate(net, s0, t_max, ssa_generator(master_seed, replicate))
    if config is None:
        raise ValueError("hybrid engines need a HybridConfig")
    cfg = config if config.t_max == t_max else replace(config, t_max=t_max)
    return hybrid_simulate(net, partition, s0, cfg, HybridStreams(master_seed, replicate))


def _run_chunk(job):
    net, engine, s0, t_max, reps, seed, config, partition = job
    out = []
    for rep in reps:
        try:
            traj = simulate_replicate(net, engine, s0, t_max, rep, seed, config, partition)
        except HybridSimError as exc:
            out.append((rep, None, f"{type(exc).__name__}: {exc}", None))
            continue
        out.append((rep, traj.values[-1].copy(), None, traj.diagnostics.to_dict()))
    return out


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(n, parts))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_jobs(jobs, parallelism: int):
    if parallelism <= 1 or len(jobs) == 1:
        return [_run_chunk(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_chunk, jobs))


@dataclass
class EnsembleResult:
    engine: str
    species: list[str]
    t_max: float
    replicate_ids: np.ndarray
    final_values: np.ndarray  # (n_ok, n_species)
    failures: list[tuple[int, str]]
    wall_time: float
    requested: int
    master_seed: int
    h: float | None = None
    lambda_max: float | None = None
    totals: dict = field(default_factory=dict)
    network: ReactionNetwork | None = field(default=None, repr=False)

    @property
    def replicates(self) -> int:
        return int(self.final_values.shape[0])

    @property
    def final_states(self) -> list[State]:
        return [self.network.state_from_vector(v, self.t_max) for v in self.final_values]

    def column(self, species: str) -> np.ndarray:
        return self.final_values[:, self.species.index(species)]

    def stats(self) -> dict:
        per = {
            name: {"mean": float(np.mean(self.final_values[:, i])),
                   "variance": float(np.var(self.final_values[:, i], ddof=1)) if self.replicates > 1 else 0.0}
            for i, name in enumerate(self.species)
        }
        return {
            "engine": self.engine,
            "T": self.t_max,
            "replicates": self.replicates,
            "requested": self.requested,
            "failed": len(self.failures),
            "seed": self.master_seed,
            "h": self.h,
            "lambda_max": self.lambda_max,
            "species": per,
            "wall_time": self.wall_time,
            "diagnostics": self.totals,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["replicate", *self.species]) + "\n")
            for rep, row in zip(self.replicate_ids, self.final_values):
                fh.write(",".join([str(int(rep)), *("%.10g" % v for v in row)]) + "\n")

    def write_stats(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.stats(), fh, indent=2)
            fh.write("\n")


def run_ensemble(
    net: ReactionNetwork,
    engine: str,
    s0: State | None,
    t_max: float,
    replicates: int,
    master_seed: int,
    parallelism: int = 1,
    config: HybridConfig | None = None,
    partition: Partition | None = None,
    h_threshold: float = 100.0,
) -> EnsembleResult:
    """Run ``replicates`` independent paths to ``t_max`` and keep the final states.

    Failed replicates are collected; the batch raises ``BatchFailure`` only
    when more than 1% of them fail.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    partition = resolve_partition(net, engine, partition, h_threshold)
    if engine != "ssa" and config is None:
        raise ValueError("hybrid engines need a HybridConfig")
    start = time.perf_counter()
    jobs = [(net, engine, s0, t_max, reps, master_seed, config, partition)
            for reps in _chunks(replicates, 4 * parallelism)]
    rows = sorted((r for chunk in _map_jobs(jobs, parallelism) for r in chunk), key=lambda r: r[0])
    wall = time.perf_counter() - start
    ok = [r for r in rows if r[2] is None]
    failures = [(r[0], r[2]) for r in rows if r[2] is not None]
    if len(failures) > FAILURE_FRACTION * replicates:
        raise BatchFailure(
            f"{len(failures)} of {replicates} replicates failed (first: {failures[0][1]})", failures
        )
    totals = {"events": 0, "thinned": 0, "clamps": 0, "retries": 0}
    for r in ok:
        d = r[3]
        totals["events"] += sum(d["events_per_reaction"].values())
        totals["thinned"] += d["thinned"]
        totals["clamps"] += d["clamps"]
        totals["retries"] += d["retries"]
    n_s = len(net.species)
    values = np.array([r[1] for r in ok]) if ok else np.empty((0, n_s))
    return EnsembleResult(
        engine=engine,
        species=net.species_names,
        t_max=float(t_max),
        replicate_ids=np.array([r[0] for r in ok], dtype=np.int64),
        final_values=values.reshape(-1, n_s),
        failures=failures,
        wall_time=wall,
        requested=replicates,
        master_seed=int(master_seed),
        h=None if config is None or engine == "ssa" else config.h,
        lambda_max=None if config is None or engine == "ssa" else config.lambda_max,
        totals=totals,
        network=net,
    )


# ---------------------------------------------------------------------------
# distributions


def histogram(samples, bins: int | None = None, bin_width: float | None = None):
    """Return ``(edges, counts, frequencies)``; give either ``bins`` or ``bin_width``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("histogram of an empty sample set")
    if (bins is None) == (bin_width is None):
        raise ValueError("give exactly one of bins or bin_width")
    if bin_width is not None:
        if not bin_width > 0:
            raise ValueError("bin_width must be positive")
        lo = math.floor(x.min() / bin_width) * bin_width
        n = max(1, int(math.floor((x.max() - lo) / bin_width)) + 1)
        edges = lo + bin_width * np.arange(n + 1)
    else:
        if bins < 1:
            raise ValueError("bins must be at least 1")
        edges = np.histogram_bin_edges(x, bins=bins)
    counts, edges = np.histogram(x, bins=edges)
    return edges, counts, counts / x.size


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = a.size * b.size / (a.size + b.size)
    return d, float(kstwobign.sf(math.sqrt(en) * d))


# ---------------------------------------------------------------------------
# strong convergence


@dataclass
class ConvergenceTable:
    h: np.ndarray
    mse: np.ndarray
    n: np.ndarray
    slope: float
    h_ref: float

    def rows(self) -> list[tuple[float, float, int]]:
        return [(float(h), float(e), int(n)) for h, e, n in zip(self.h, self.mse, self.n)]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("h,mse,n\n")
            for h, e, n in self.rows():
                fh.write(f"{h:.10g},{e:.10g},{n}\n")


def _check_dyadic(h_list) -> np.ndarray:
    h = np.sort(np.asarray(h_list, dtype=float))[::-1]
    if h.size < 3:
        raise ValueError("need at least three step sizes")
    if np.any(h <= 0):
        raise ValueError("step sizes must be positive")
    if h[0] / h[-1] < 10.0 * (1 - 1e-9):
        raise ValueError("step sizes must span at least one decade")
    for v in h:
        e = math.log2(v / h[-1])
        if abs(e - round(e)) > 1e-9:
            raise ValueError(f"h={v} is not a dyadic multiple of the finest step {h[-1]}")
    return h


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h) over positive errors."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > 0
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[keep]), np.log(err[keep]), 1)[0])


def convergence_study(
    net: ReactionNetwork,
    partition: Partition,
    s0: State | None,
    t_max: float,
    h_list,
    replicates: int,
    master_seed: int,
    lambda_max: float = 1.0,
    diffusion_noise: bool = True,
) -> ConvergenceTable:
    """Mean-square self-convergence against the finest step under coupled noise.

    Every step size of a replicate reuses the same reference arrivals, marks
    and fine Wiener increments (drawn at the finest step), so coarse
    increments are exact sums of the fine ones.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    h = _check_dyadic(h_list)
    h_ref = float(h[-1])
    base = HybridConfig(h=h_ref, lambda_max=lambda_max, t_max=t_max,
                        noise_dt=h_ref, diffusion_noise=diffusion_noise)
    sq = np.zeros(h.size)
    used = 0
    for rep in range(replicates):
        try:
            finals = [
                hybrid_simulate(net, partition, s0, replace(base, h=float(v)),
                                HybridStreams(master_seed, rep)).values[-1]
                for v in h
            ]
        except HybridSimError:
            continue
        ref = finals[-1]
        sq += [float(np.sum((f - ref) ** 2)) for f in finals]
        used += 1
    if used == 0:
        raise BatchFailure("every replicate of the convergence study failed", [])
    mse = sq / used
    coarse = h > h_ref * (1 + 1e-9)
    slope = fit_slope(h[coarse], mse[coarse])
    if np.any(np.diff(mse[coarse]) > 0):
        warnings.warn("convergence errors are not monotone in h", RuntimeWarning, stacklevel=2)
    return ConvergenceTable(h=h, mse=mse, n=np.full(h.size, used), slope=slope, h_ref=h_ref)


# ---------------------------------------------------------------------------
# speedup


@dataclass
class BenchmarkTable:
    h: np.ndarray
    t_ssa: float
    t_hybrid: np.ndarray
    replicates: int

    @property
    def ratio(self) -> np.ndarray:
        return self.t_ssa / self.t_hybrid

    def rows(self) -> list[tuple[float, float, float, float]]:
        return [(float(h), self.t_ssa, float(t), float(self.t_ssa / t)) for h, t in zip(self.h, self.t_hybrid)]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("h,t_ssa,t_hybrid,ratio\n")
            for row in self.rows():
                fh.write(",".join("%.10g" % v for v in row) + "\n")


def speedup_benchmark(
    net: ReactionNetwork,
    s0: State | None,
    t_max: float,
    h_list,
    replicates: int,
    master_seed: int,
    lambda_max: float,
    partition: Partition | None = None,
    lambda_policy: str = "fail",
) -> BenchmarkTable:
    """Wall-time ratio of the exact engine to the hybrid engine per step size.

    Both engines run the same number of replicates in this process; the
    exact engine is timed once.  A short untimed run first warms up the
    compiled loops.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    if partition is None:
        partition = partition_reactions(net)
    h_list = [float(v) for v in h_list]
    warm = min(t_max, 1.0)
    ssa_simulate(net, s0, warm, ssa_generator(master_seed, 0))
    hybrid_simulate(net, partition, s0, HybridConfig(h=min(h_list), lambda_max=lambda_max, t_max=warm,
                                                      lambda_policy=lambda_policy), 0)
    start = time.perf_counter()
    for rep in range(replicates):
        ssa_simulate(net, s0, t_max, ssa_generator(master_seed, rep))
    t_ssa = time.perf_counter() - start
    t_hyb = []
    for h in h_list:
        cfg = HybridConfig(h=h, lambda_max=lambda_max, t_max=t_max, lambda_policy=lambda_policy)
        start = time.perf_counter()
        for rep in range(replicates):
            hybrid_simulate(net, partition, s0, cfg, HybridStreams(master_seed, rep))
        t_hyb.append(time.perf_counter() - start)
    return BenchmarkTable(np.array(h_list), t_ssa, np.array(t_hyb), replicates)
