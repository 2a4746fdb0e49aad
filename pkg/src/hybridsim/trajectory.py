"""Sampled paths and per-run diagnostics shared by both engines."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import ReactionNetwork, State


@dataclass
class Diagnostics:
    events_per_reaction: dict[str, int] = field(default_factory=dict)
    thinned: int = 0
    clamps: int = 0
    retries: int = 0
    lambda_max_used: float | None = None
    wall_time_seconds: float = 0.0

    @property
    def events(self) -> int:
        return sum(self.events_per_reaction.values())

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


@dataclass
class Trajectory:
    """State samples on a time grid (cadlag: a sample at an event time
    shows the post-event state), plus an optional event log."""

    network: ReactionNetwork
    times: np.ndarray
    values: np.ndarray  # (n_samples, n_species), declaration order
    diagnostics: Diagnostics
    events: list[tuple[float, str]] | None = None

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> State:
        return self.network.state_from_vector(self.values[i], float(self.times[i]))

    @property
    def samples(self) -> list[tuple[float, State]]:
        return [(float(t), self.state(i)) for i, t in enumerate(self.times)]

    @property
    def final(self) -> State:
        return self.state(len(self.times) - 1)

    def column(self, species: str) -> np.ndarray:
        return self.values[:, self.network.species_index[species]]

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self.network.species_names, self.times, self.values)


def write_trajectory_csv(path, names, times, values) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["t", *names]) + "\n")
        for t, row in zip(times, values):
            fh.write(",".join("%.10g" % v for v in (t, *row)) + "\n")


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header[1:], data[:, 0], data[:, 1:]


def sample_times(t_max: float, sample_dt: float | None = None, grid=None) -> np.ndarray:
    """Sample grid in [0, t_max]; always starts at 0 and ends at t_max."""
    if grid is not None:
        g = np.unique(np.asarray(grid, dtype=float))
        if g.size and (g[0] < 0 or g[-1] > t_max):
            raise ValueError("sample grid must lie inside [0, t_max]")
        if not g.size or g[0] != 0.0:
            g = np.concatenate([[0.0], g])
        return g
    if sample_dt is None:
        return np.array([0.0, t_max])
    n = int(np.floor(t_max / sample_dt + 1e-9))
    g = np.arange(n + 1) * sample_dt
    if t_max - g[-1] > 1e-9 * sample_dt:
        g = np.append(g, t_max)
    return g
