"""Reproducible Poisson draws of binned smeared counts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._exceptions import DomainError


@dataclass(frozen=True)
class EventSample:
    counts: np.ndarray
    seed: int
    replication: int


def replication_rng(seed, replication):
    """Independent generator for one replication.

    Streams are keyed by ``(seed, replication)`` through ``SeedSequence``
    spawn keys, so they do not depend on the order replications are drawn in.
    """
    if seed < 0 or replication < 0:
        raise DomainError("seed and replication must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.PCG64(ss))


def sample_counts(mu, seed, replication=0):
    """Draw ``y_j ~ Poisson(mu_j)`` independently per bin."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or not np.all(np.isfinite(mu)) or np.any(mu < 0):
        raise DomainError("Poisson means must be finite and nonnegative")
    counts = replication_rng(seed, replication).poisson(mu).astype(np.int64)
    return EventSample(counts=counts, seed=int(seed), replication=int(replication))
