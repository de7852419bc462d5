"""Multinomial logistic regression with plain and LDP-protected local SGD.

Parameters are a flat vector holding a ``(feature_dim + 1, num_classes)``
weight matrix in row-major order; the last row is the bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError("Dataset needs X (n, d) and y (n,)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class ModelParams:
    w: np.ndarray
    round: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)):
            raise ValueError("model parameters must be finite")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    eta: float = 0.1
    epochs: int = 1
    local_steps: int | None = None
    l2_reg: float = 0.0
    use_ldp: bool = False
    clip: float = 1.0
    sigma: float = 0.0


def n_params(feature_dim: int, num_classes: int) -> int:
    return (feature_dim + 1) * num_classes


def init_params(feature_dim: int, num_classes: int) -> ModelParams:
    return ModelParams(np.zeros(n_params(feature_dim, num_classes)))


def _weights(w: np.ndarray, feature_dim: int, num_classes: int) -> np.ndarray:
    return w.reshape(feature_dim + 1, num_classes)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


def predict_proba(w: np.ndarray | ModelParams, X: np.ndarray, num_classes: int) -> np.ndarray:
    w = w.w if isinstance(w, ModelParams) else w
    logits = _augment(X) @ _weights(w, X.shape[1], num_classes)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def loss_and_grad(w: np.ndarray | ModelParams, batch: Dataset, l2_reg: float = 0.0):
    """Mean cross-entropy plus ``l2_reg/2 * ||w||^2`` and its exact gradient."""
    w = w.w if isinstance(w, ModelParams) else w
    if len(batch) == 0:
        raise ValueError("empty batch")
    Xa = _augment(batch.X)
    W = _weights(w, batch.feature_dim, batch.num_classes)
    logits = Xa @ W
    logits -= logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1))
    n = len(batch)
    rows = np.arange(n)
    loss = float(np.mean(log_norm - logits[rows, batch.y])) + 0.5 * l2_reg * float(w @ w)
    p = np.exp(logits - log_norm[:, None])
    p[rows, batch.y] -= 1.0
    grad = (Xa.T @ p).ravel() / n + l2_reg * w
    return loss, grad


def accuracy(w: np.ndarray | ModelParams, test: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lower class."""
    if len(test) == 0:
        raise ValueError("empty test set")
    w = w.w if isinstance(w, ModelParams) else w
    logits = _augment(test.X) @ _weights(w, test.feature_dim, test.num_classes)
    return float(np.mean(np.argmax(logits, axis=1) == test.y))


def clip_gradient(g: np.ndarray, C: float) -> np.ndarray:
    """Scale ``g`` down to L2 norm ``C`` if it is longer; otherwise return it as is."""
    if not C > 0:
        raise ValueError("clip threshold must be > 0")
    return g / max(1.0, float(np.linalg.norm(g)) / C)


def noise_scale(eta: float, C: float, T: int, B_k: float, epsilon_k: float, delta: float) -> float:
    """Gaussian-mechanism noise multiplier for one client.

    ``sigma_k = 2*sqrt(2*ln(1.25/delta)) * eta * C * T / (B_k * epsilon_k)``
    """
    if min(eta, C, T, B_k, epsilon_k) <= 0 or not 0 < delta < 1:
        raise ValueError("noise_scale needs positive inputs and delta in (0, 1)")
    return 2.0 * math.sqrt(2.0 * math.log(1.25 / delta)) * eta * C * T / (B_k * epsilon_k)


def _batches(n: int, B: int, cfg: TrainConfig, rng: np.random.Generator):
    steps = cfg.local_steps
    if steps is None:
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, B):
                yield order[start : start + B]
        return
    done = 0
    while done < steps:
        order = rng.permutation(n)
        for start in range(0, n, B):
            yield order[start : start + B]
            done += 1
            if done == steps:
                return


def local_train(
    w0: np.ndarray | ModelParams,
    shard: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Minibatch SGD from ``w0``; returns ``(w_new, w_new - w0)``.

    Batches are drawn without replacement and reshuffled every epoch. With
    ``use_ldp`` each step clips the batch gradient to ``clip`` and adds
    i.i.d. ``N(0, (sigma*clip)**2)`` noise before the update.
    """
    w0 = w0.w if isinstance(w0, ModelParams) else w0
    B = max(1, min(int(cfg.batch_size), len(shard)))
    w = w0.copy()
    noise_std = cfg.sigma * cfg.clip
    for idx in _batches(len(shard), B, cfg, rng):
        _, g = loss_and_grad(w, shard.subset(idx), cfg.l2_reg)
        if cfg.use_ldp:
            g = clip_gradient(g, cfg.clip)
            if noise_std > 0:
                g = g + rng.normal(0.0, noise_std, size=g.shape)
        w = w - cfg.eta * g
    return w, w - w0


def fit_full_batch(
    data: Dataset,
    l2_reg: float,
    w0: np.ndarray | None = None,
    gtol: float = 1e-8,
) -> np.ndarray:
    """Minimizer of the regularized pooled loss (L-BFGS, tight tolerance)."""
    from scipy.optimize import minimize

    if w0 is None:
        w0 = np.zeros(n_params(data.feature_dim, data.num_classes))
    res = minimize(
        lambda w: loss_and_grad(w, data, l2_reg),
        w0,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-15, "maxiter": 20000, "maxcor": 30},
    )
    return res.x


def hessian_lipschitz(w: np.ndarray, data: Dataset, l2_reg: float, iters: int = 50, seed: int = 0) -> float:
    """Largest Hessian eigenvalue at ``w`` by power iteration on finite-difference HVPs."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=w.shape)
    v /= np.linalg.norm(v)
    h = 1e-5
    lam = 0.0
    for _ in range(iters):
        _, gp = loss_and_grad(w + h * v, data, l2_reg)
        _, gm = loss_and_grad(w - h * v, data, l2_reg)
        hv = (gp - gm) / (2 * h)
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            break
        v = hv / lam
    return lam
