"""Synthetic data, label-skewed client partitioning and non-IID estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import STREAM_DATA, STREAM_PARTITION, STREAM_PROBE, DataSpec, substream
from .learner import Dataset, loss_and_grad, n_params

MAX_PARTITION_RETRIES = 10
MIN_TEST_SHARD = 20


class PartitionError(RuntimeError):
    pass


def class_means(num_classes: int, feature_dim: int, separation: float) -> np.ndarray:
    """Mixture-component centres.

    With enough dimensions each class gets its own axis, so every pair is
    ``separation * sqrt(2)`` apart. Otherwise classes sit on a circle in the
    first two coordinates with neighbours ``separation`` apart.
    """
    means = np.zeros((num_classes, feature_dim))
    if feature_dim >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = separation
    else:
        radius = separation / (2.0 * np.sin(np.pi / num_classes))
        ang = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(ang)
        means[:, 1] = radius * np.sin(ang)
    return means


def generate_global(spec: DataSpec, n_samples: int, seed: int) -> Dataset:
    """Balanced Gaussian mixture with one isotropic component per class."""
    C, d = spec.num_classes, spec.feature_dim
    if C < 2 or d < 2:
        raise ValueError("need num_classes >= 2 and feature_dim >= 2")
    if n_samples < C:
        raise ValueError("need at least one sample per class")
    rng = substream(seed, STREAM_DATA)
    y = np.arange(n_samples) % C
    y = np.sort(y)
    X = class_means(C, d, spec.separation)[y] + rng.normal(0.0, spec.noise_std, size=(n_samples, d))
    perm = rng.permutation(n_samples)
    return Dataset(X[perm], y[perm].astype(np.int64), C)


def split_holdout(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset, np.ndarray]:
    """Stratified split into ``(pool, holdout, holdout_idx)``."""
    rng = substream(seed, STREAM_DATA, 1)
    hold = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.y == c)
        k = int(round(fraction * len(idx)))
        hold.append(rng.choice(idx, size=k, replace=False))
    hold_idx = np.sort(np.concatenate(hold))
    mask = np.ones(len(ds), dtype=bool)
    mask[hold_idx] = False
    return ds.subset(np.flatnonzero(mask)), ds.subset(hold_idx), hold_idx


@dataclass(frozen=True)
class ClientShards:
    """Per-client train/test index sets into ``data``."""

    data: Dataset
    train_idx: tuple[np.ndarray, ...]
    test_idx: tuple[np.ndarray, ...]

    @property
    def K(self) -> int:
        return len(self.train_idx)

    def train(self, k: int) -> Dataset:
        return self.data.subset(self.train_idx[k])

    def test(self, k: int) -> Dataset:
        return self.data.subset(self.test_idx[k])

    def owner(self) -> np.ndarray:
        """Client id owning each sample of ``data`` (-1 if unassigned)."""
        own = np.full(len(self.data), -1, dtype=np.int64)
        for k in range(self.K):
            own[self.train_idx[k]] = k
            own[self.test_idx[k]] = k
        return own

    def members(self) -> Dataset:
        """Union of all training shards (the membership-inference positives)."""
        return self.data.subset(np.sort(np.concatenate(self.train_idx)))

    def pooled_train(self) -> Dataset:
        return self.members()

    def permuted(self, perm: Sequence[int]) -> "ClientShards":
        """Shards relabelled so that new client ``i`` is old client ``perm[i]``."""
        return ClientShards(
            self.data,
            tuple(self.train_idx[j] for j in perm),
            tuple(self.test_idx[j] for j in perm),
        )


def label_groups(K: int, num_classes: int) -> list[list[int]]:
    """Clients serving each label: client k serves label ``k % num_classes``.

    With fewer clients than labels the mapping wraps the other way, so label
    ``l`` is served by client ``l % K``.
    """
    if K >= num_classes:
        return [[k for k in range(K) if k % num_classes == l] for l in range(num_classes)]
    return [[l % K] for l in range(num_classes)]


def partition_noniid(
    ds: Dataset,
    K: int,
    p: float,
    seed: int,
    test_fraction: float = 0.2,
    min_shard: int = 100,
) -> ClientShards:
    """Assign each sample of label ``l`` to group ``l`` with probability ``p``.

    Within the chosen group (or among all clients, with probability
    ``1 - p``) the client is uniform. Each shard is then split into train
    and test parts. Re-deals with a fresh substream if some shard ends up
    below ``min_shard``; gives up after ``MAX_PARTITION_RETRIES``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    groups = label_groups(K, ds.num_classes)
    for attempt in range(MAX_PARTITION_RETRIES):
        rng = substream(seed, STREAM_PARTITION, attempt)
        n = len(ds)
        to_group = rng.random(n) < p
        u = rng.random(n)
        owner = np.empty(n, dtype=np.int64)
        for i in range(n):
            if to_group[i]:
                g = groups[ds.y[i]]
                owner[i] = g[int(u[i] * len(g))]
            else:
                owner[i] = int(u[i] * K)
        counts = np.bincount(owner, minlength=K)
        if counts.min() >= max(min_shard, 1):
            break
    else:
        raise PartitionError(
            f"could not give every client >= {min_shard} samples in {MAX_PARTITION_RETRIES} tries"
        )
    train, test = [], []
    for k in range(K):
        idx = rng.permutation(np.flatnonzero(owner == k))
        n_test = int(round(test_fraction * len(idx)))
        if n_test < MIN_TEST_SHARD:
            raise PartitionError(
                f"client {k} test shard has {n_test} samples; need >= {MIN_TEST_SHARD}"
            )
        test.append(np.sort(idx[:n_test]))
        train.append(np.sort(idx[n_test:]))
    return ClientShards(ds, tuple(train), tuple(test))


def default_probes(feature_dim: int, num_classes: int, seed: int, n_random: int = 4, scale: float = 0.5):
    """Initial (zero) model plus ``n_random`` Gaussian perturbations of it."""
    d = n_params(feature_dim, num_classes)
    rng = substream(seed, STREAM_PROBE)
    return [np.zeros(d)] + [rng.normal(0.0, scale, size=d) for _ in range(n_random)]


def estimate_lambda(shards: ClientShards, probes: Sequence[np.ndarray]) -> np.ndarray:
    """Empirical gradient divergence per client.

    ``lambda_k = max_probe ||grad F_k(w) - grad F(w)||`` where ``F`` is the
    sample-weighted pooled training loss.
    """
    if len(probes) == 0:
        raise ValueError("need at least one probe point")
    pooled = shards.pooled_train()
    lam = np.zeros(shards.K)
    for w in probes:
        _, g_all = loss_and_grad(w, pooled)
        for k in range(shards.K):
            _, g_k = loss_and_grad(w, shards.train(k))
            lam[k] = max(lam[k], float(np.linalg.norm(g_k - g_all)))
    return lam


def label_entropy(shards: ClientShards) -> np.ndarray:
    """Shannon entropy (nats) of each client's label histogram."""
    out = np.zeros(shards.K)
    C = shards.data.num_classes
    for k in range(shards.K):
        y = shards.data.y[np.concatenate([shards.train_idx[k], shards.test_idx[k]])]
        p = np.bincount(y, minlength=C) / len(y)
        p = p[p > 0]
        out[k] = float(-(p * np.log(p)).sum())
    return out


def dump_shards(shards: ClientShards, out_dir: str | Path) -> list[Path]:
    """Write ``client_<k>_{train,test}.csv`` with feature columns and a label column."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    d = shards.data.feature_dim
    header = [f"x{i}" for i in range(d)] + ["label", "global_index"]
    for k in range(shards.K):
        for part, idx in (("train", shards.train_idx[k]), ("test", shards.test_idx[k])):
            path = out / f"client_{k}_{part}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for i in idx:
                    w.writerow([repr(float(v)) for v in shards.data.X[i]] + [int(shards.data.y[i]), int(i)])
            written.append(path)
    return written
