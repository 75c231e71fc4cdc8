"""Per-agent objectives with exact and stochastic gradient oracles.

Every problem exposes a batched interface over an ``(N, n)`` matrix whose
row ``i`` is the point at which agent ``i``'s objective is evaluated:
``values(X)`` returns ``f_i(x_i)`` for all ``i`` and ``gradients(X)`` the
stacked gradients.  Single-agent helpers (``value``, ``gradient``) and the
global average ``f(x) = mean_i f_i(x)`` are built on top of it.
"""

from __future__ import annotations

import csv
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFiniteInput

NOISE_DISTRIBUTIONS = ("gaussian_iid", "bounded_uniform")


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("input contains NaN or inf")


class Problem(ABC):
    """Finite-sum objective ``f(x) = (1/N) sum_i f_i(x)`` over ``N`` agents."""

    kind: str
    n_agents: int
    n_dim: int

    @abstractmethod
    def values(self, X: np.ndarray) -> np.ndarray:
        """``f_i(X[i])`` for every agent, shape ``(N,)``."""

    @abstractmethod
    def gradients(self, X: np.ndarray) -> np.ndarray:
        """``grad f_i(X[i])`` for every agent, shape ``(N, n)``."""

    @abstractmethod
    def smoothness_constant(self) -> float:
        """Upper bound on every local gradient's Lipschitz constant."""

    @abstractmethod
    def lower_bound(self) -> float:
        """Certified value ``<= inf_x f(x)``."""

    def describe(self) -> dict:
        return {"kind": self.kind, "n_agents": self.n_agents, "n_dim": self.n_dim}

    # -- single-agent and global helpers ------------------------------------

    def _row(self, agent: int, x: np.ndarray) -> np.ndarray:
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent {agent} out of range [0, {self.n_agents})")
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        X = np.zeros((self.n_agents, self.n_dim))
        X[agent] = x
        return X

    def value(self, agent: int, x: np.ndarray) -> float:
        return float(self.values(self._row(agent, x))[agent])

    def gradient(self, agent: int, x: np.ndarray) -> np.ndarray:
        return self.gradients(self._row(agent, x))[agent]

    def global_value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        return float(np.mean(self.values(np.broadcast_to(x, (self.n_agents, self.n_dim)))))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        return self.gradients(np.broadcast_to(x, (self.n_agents, self.n_dim))).mean(axis=0)


@dataclass(frozen=True)
class NoiseModel:
    """Additive zero-mean gradient noise with ``E||eta||^2 = sigma^2``.

    ``gaussian_iid`` draws each coordinate from ``N(0, sigma^2 / n)``;
    ``bounded_uniform`` draws each coordinate uniformly from
    ``[-a, a]`` with ``a = sigma * sqrt(3 / n)``.
    """

    sigma: float = 0.0
    distribution: str = "gaussian_iid"

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.distribution not in NOISE_DISTRIBUTIONS:
            raise ValueError(f"unknown noise distribution {self.distribution!r}")

    def sample(self, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        n = shape[-1]
        if self.distribution == "gaussian_iid":
            return rng.normal(0.0, self.sigma / np.sqrt(n), size=shape)
        a = self.sigma * np.sqrt(3.0 / n)
        return rng.uniform(-a, a, size=shape)


def stochastic_gradients(problem: Problem, X: np.ndarray, noise: NoiseModel,
                         rng: np.random.Generator) -> np.ndarray:
    """Batched stochastic oracle; ``sigma == 0`` returns the exact gradients and draws nothing."""
    G = problem.gradients(X)
    if noise.sigma == 0:
        return G
    return G + noise.sample(G.shape, rng)


def stochastic_gradient(problem: Problem, agent: int, x: np.ndarray, noise: NoiseModel,
                        rng: np.random.Generator) -> np.ndarray:
    g = problem.gradient(agent, x)
    if noise.sigma == 0:
        return g
    return g + noise.sample(g.shape, rng)


# ---------------------------------------------------------------------------
# hetero_quadratic


class HeteroQuadratic(Problem):
    """``f_i(x) = 0.5 (x - c_i)^T Q_i (x - c_i)`` with diagonal ``Q_i``.

    Centers are ``c_i = heterogeneity * z_i`` with ``z_i ~ N(0, I)``.
    ``curvature="identity"`` gives ``Q_i = I``; ``"random"`` draws diagonal
    entries uniformly from ``[1, kappa]``.
    """

    kind = "hetero_quadratic"

    def __init__(self, centers: np.ndarray, q_diag: np.ndarray | None = None):
        self.centers = np.array(centers, dtype=float)
        self.n_agents, self.n_dim = self.centers.shape
        self.q_diag = np.ones_like(self.centers) if q_diag is None else np.array(q_diag, dtype=float)
        if self.q_diag.shape != self.centers.shape or np.any(self.q_diag <= 0):
            raise ValueError("q_diag must be positive with the same shape as centers")
        for arr in (self.centers, self.q_diag):
            arr.setflags(write=False)

    @classmethod
    def generate(cls, n_agents: int, n_dim: int, heterogeneity: float = 1.0, seed: int = 0,
                 curvature: str = "identity", kappa: float = 4.0) -> HeteroQuadratic:
        rng = np.random.default_rng(seed)
        centers = heterogeneity * rng.standard_normal((n_agents, n_dim))
        if curvature == "identity":
            q = None
        elif curvature == "random":
            q = rng.uniform(1.0, kappa, size=(n_agents, n_dim))
        else:
            raise ValueError(f"unknown curvature {curvature!r}")
        return cls(centers, q)

    def values(self, X):
        D = np.asarray(X) - self.centers
        return 0.5 * np.sum(self.q_diag * D * D, axis=1)

    def gradients(self, X):
        return self.q_diag * (np.asarray(X) - self.centers)

    def smoothness_constant(self):
        return float(np.max(self.q_diag))

    def minimizer(self) -> np.ndarray:
        return (self.q_diag * self.centers).sum(axis=0) / self.q_diag.sum(axis=0)

    def lower_bound(self):
        return self.global_value(self.minimizer())

    def describe(self):
        return {**super().describe(), "identity_curvature": bool(np.all(self.q_diag == 1))}


# ---------------------------------------------------------------------------
# nonconvex_logistic


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class NonconvexLogistic(Problem):
    """Binary logistic loss plus the nonconvex penalty ``reg * sum_j x_j^2 / (1 + x_j^2)``.

    ``features`` has shape ``(N, m, n)`` and ``labels`` shape ``(N, m)`` with
    entries in ``{-1, +1}``.  Each ``f_i`` averages over agent ``i``'s ``m``
    samples.  The penalty lies in ``[0, reg * n]`` and the loss is positive,
    so ``f >= 0``.
    """

    kind = "nonconvex_logistic"

    def __init__(self, features: np.ndarray, labels: np.ndarray, reg: float = 0.1):
        self.features = np.array(features, dtype=float)
        self.labels = np.array(labels, dtype=float)
        self.n_agents, self.m, self.n_dim = self.features.shape
        if self.labels.shape != (self.n_agents, self.m) or not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +-1 with shape (N, m)")
        self.reg = float(reg)
        for arr in (self.features, self.labels):
            arr.setflags(write=False)
        self._ya = self.labels[:, :, None] * self.features

    @classmethod
    def generate(cls, n_agents: int, n_dim: int, heterogeneity: float = 1.0, seed: int = 0,
                 samples_per_agent: int = 50, reg: float = 0.1) -> NonconvexLogistic:
        """Synthetic per-agent data.

        Agent ``i`` draws features ``a ~ N(h * s_i, I) / sqrt(n)`` around its
        own shift ``s_i ~ N(0, I)`` and labels from a logistic model whose
        weight vector ``w_0 + h * d_i`` is also agent specific.
        """
        rng = np.random.default_rng(seed)
        h = heterogeneity
        w0 = rng.standard_normal(n_dim)
        shifts = rng.standard_normal((n_agents, n_dim))
        wdev = rng.standard_normal((n_agents, n_dim))
        A = (h * shifts[:, None, :] + rng.standard_normal((n_agents, samples_per_agent, n_dim))) / np.sqrt(n_dim)
        w = w0[None, :] + h * wdev
        p = _sigmoid(np.einsum("imn,in->im", A, w))
        y = np.where(rng.random(p.shape) < p, 1.0, -1.0)
        return cls(A, y, reg)

    def values(self, X):
        X = np.asarray(X)
        z = np.einsum("imn,in->im", self._ya, X)
        loss = np.logaddexp(0.0, -z).mean(axis=1)
        X2 = X * X
        return loss + self.reg * np.sum(X2 / (1 + X2), axis=1)

    def gradients(self, X):
        X = np.asarray(X)
        z = np.einsum("imn,in->im", self._ya, X)
        coef = _sigmoid(-z) / self.m
        g = -np.einsum("im,imn->in", coef, self._ya)
        return g + self.reg * 2 * X / (1 + X * X) ** 2

    def data_radius(self) -> float:
        return float(np.sqrt(np.max(np.sum(self.features ** 2, axis=2))))

    def smoothness_constant(self):
        # loss Hessian <= A^T A / (4m); the penalty's second derivative lies in [-reg/2, 2 reg]
        gram = np.einsum("imn,imk->ink", self.features, self.features) / self.m
        return float(np.max(np.linalg.eigvalsh(gram)[:, -1]) / 4 + 2 * self.reg)

    def lower_bound(self):
        return 0.0

    def describe(self):
        return {**super().describe(), "samples_per_agent": self.m, "reg": self.reg}


# ---------------------------------------------------------------------------
# softmax_regression


class SoftmaxRegression(Problem):
    """Multinomial logistic regression with a small ridge term.

    The decision variable is the flattened ``(d, C)`` weight matrix, so
    ``n = d * C``.  ``f_i(x) = mean cross-entropy + (ridge / 2) ||x||^2`` over
    agent ``i``'s samples.
    """

    kind = "softmax_regression"

    def __init__(self, features: list[np.ndarray], labels: list[np.ndarray], n_classes: int,
                 ridge: float = 1e-2):
        if len(features) != len(labels) or not features:
            raise ValueError("need one (features, labels) pair per agent")
        self.features = [np.array(a, dtype=float) for a in features]
        self.labels = [np.array(y, dtype=int) for y in labels]
        self.n_agents = len(features)
        self.d = self.features[0].shape[1]
        self.n_classes = int(n_classes)
        self.n_dim = self.d * self.n_classes
        self.ridge = float(ridge)
        self._onehot = [np.eye(self.n_classes)[y] for y in self.labels]

    @classmethod
    def generate(cls, n_agents: int, heterogeneity: float = 1.0, seed: int = 0, n_features: int = 4,
                 n_classes: int = 3, samples_per_agent: int = 30, ridge: float = 1e-2) -> SoftmaxRegression:
        """Gaussian class blobs; agent ``i`` over-samples class ``i mod C`` by a factor growing with ``h``."""
        rng = np.random.default_rng(seed)
        means = 2.0 * rng.standard_normal((n_classes, n_features))
        feats, labs = [], []
        for i in range(n_agents):
            weights = np.ones(n_classes)
            weights[i % n_classes] += heterogeneity
            y = rng.choice(n_classes, size=samples_per_agent, p=weights / weights.sum())
            a = means[y] + rng.standard_normal((samples_per_agent, n_features))
            feats.append(a / np.sqrt(n_features))
            labs.append(y)
        return cls(feats, labs, n_classes, ridge)

    @classmethod
    def from_csv(cls, path_: str | Path, n_agents: int, ridge: float = 1e-2) -> SoftmaxRegression:
        """Rows ``label, feature_1, ..., feature_d``; rows are dealt to agents round-robin."""
        rows = []
        with open(path_, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if not rows:  # header line
                        continue
                    raise
        data = np.array(rows)
        y = data[:, 0].astype(int)
        if np.any(y < 0) or np.any(data[:, 0] != y):
            raise ValueError("labels must be non-negative integers")
        A = data[:, 1:]
        feats = [A[i::n_agents] for i in range(n_agents)]
        labs = [y[i::n_agents] for i in range(n_agents)]
        if any(len(f) == 0 for f in feats):
            raise ValueError(f"fewer rows than agents ({len(rows)} < {n_agents})")
        return cls(feats, labs, int(y.max()) + 1, ridge)

    def _logits(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.features[i] @ x.reshape(self.d, self.n_classes)

    def values(self, X):
        X = np.asarray(X)
        out = np.empty(self.n_agents)
        for i in range(self.n_agents):
            z = self._logits(i, X[i])
            zmax = z.max(axis=1, keepdims=True)
            lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
            ce = np.mean(lse - np.sum(z * self._onehot[i], axis=1))
            out[i] = ce + 0.5 * self.ridge * X[i] @ X[i]
        return out

    def gradients(self, X):
        X = np.asarray(X)
        G = np.empty((self.n_agents, self.n_dim))
        for i in range(self.n_agents):
            z = self._logits(i, X[i])
            p = np.exp(z - z.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            Gi = self.features[i].T @ (p - self._onehot[i]) / len(self.labels[i])
            G[i] = Gi.ravel() + self.ridge * X[i]
        return G

    def smoothness_constant(self):
        # softmax Jacobian diag(p) - pp^T has norm <= 1/2
        return float(max(np.linalg.eigvalsh(a.T @ a / len(a))[-1] for a in self.features) / 2 + self.ridge)

    def lower_bound(self):
        return 0.0

    def describe(self):
        return {**super().describe(), "n_classes": self.n_classes, "ridge": self.ridge}


PROBLEM_KINDS = {
    "hetero_quadratic": HeteroQuadratic,
    "nonconvex_logistic": NonconvexLogistic,
    "softmax_regression": SoftmaxRegression,
}


def make_problem(kind: str, n_agents: int, n_dim: int | None = None, **params) -> Problem:
    """Config-file entry point: build a problem of ``kind`` for ``n_agents`` agents."""
    if kind == "hetero_quadratic":
        return HeteroQuadratic.generate(n_agents, n_dim, **params)
    if kind == "nonconvex_logistic":
        return NonconvexLogistic.generate(n_agents, n_dim, **params)
    if kind == "softmax_regression":
        if "csv" in params:
            csv_path = params.pop("csv")
            return SoftmaxRegression.from_csv(csv_path, n_agents, **params)
        return SoftmaxRegression.generate(n_agents, **params)
    raise ValueError(f"unknown problem kind {kind!r}")
