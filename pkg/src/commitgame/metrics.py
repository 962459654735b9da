"""Per-iteration training metrics and their delimited-text serialization.

One row per (iteration, seed). Floats are written with shortest round-trip
repr so identical runs produce byte-identical files.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .game import GameSpec, TrajectoryBatch


@dataclass
class MetricsRow:
    iteration: int
    seed: int
    returns_undiscounted: tuple[float, ...]   # per agent, mean over episodes
    returns_discounted: tuple[float, ...]
    social_welfare: float                     # sum of undiscounted means
    agreement_rate: float                     # fraction of steps all agents commit
    proposal_frequencies: tuple[tuple[float, ...], ...]
    entropy_coef: float
    temperature: float

    def values(self) -> list:
        out: list = [self.iteration, self.seed]
        out += list(self.returns_undiscounted)
        out += list(self.returns_discounted)
        out += [self.social_welfare, self.agreement_rate]
        for freqs in self.proposal_frequencies:
            out += list(freqs)
        out += [self.entropy_coef, self.temperature]
        return out


def metrics_header(spec: GameSpec) -> list[str]:
    cols = ["iteration", "seed"]
    cols += [f"return_undisc_a{i}" for i in range(spec.n_agents)]
    cols += [f"return_disc_a{i}" for i in range(spec.n_agents)]
    cols += ["social_welfare", "agreement_rate"]
    for i in range(spec.n_agents):
        cols += [f"prop_a{i}_{label}" for label in spec.action_labels[i]]
    cols += ["entropy_coef", "temperature"]
    return cols


def batch_metrics_row(batch: TrajectoryBatch, iteration: int, seed: int,
                      entropy_coef: float, temperature: float) -> MetricsRow:
    spec = batch.spec
    undisc = batch.rewards.sum(axis=1).mean(axis=0)
    disc = batch.returns[:, 0, :].mean(axis=0)
    n_rows = batch.n_episodes * batch.horizon
    freqs = tuple(
        tuple(np.bincount(batch.proposals[i].ravel(),
                          minlength=spec.action_sizes[i]) / n_rows)
        for i in range(spec.n_agents))
    return MetricsRow(
        iteration=iteration, seed=seed,
        returns_undiscounted=tuple(float(x) for x in undisc),
        returns_discounted=tuple(float(x) for x in disc),
        social_welfare=float(undisc.sum()),
        agreement_rate=float(batch.all_commit.mean()),
        proposal_frequencies=tuple(tuple(float(x) for x in f) for f in freqs),
        entropy_coef=float(entropy_coef), temperature=float(temperature),
    )


def format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_metrics(path, spec: GameSpec, rows: list[MetricsRow]) -> None:
    header = metrics_header(spec)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row.values()) + "\n")


def read_metrics(path, lenient: bool = False):
    """Parse a metrics file into (header, array of float rows).

    With lenient=True malformed rows are skipped with a warning instead of
    raising; an empty file body yields a (0, n_cols) array.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            if len(parts) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(parts)}")
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            if not lenient:
                raise
            warnings.warn(f"{path}:{lineno}: skipping malformed row ({exc})")
    data = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, len(header)))
    return header, data


def column(header: list[str], data: np.ndarray, name: str) -> np.ndarray:
    return data[:, header.index(name)]
