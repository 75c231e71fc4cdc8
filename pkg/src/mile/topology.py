"""Communication graphs, mixing matrices and their spectra.

A :class:`TopologySpec` is an undirected graph over ``n_agents`` nodes.
:func:`build_metropolis_weights` turns it into a symmetric doubly stochastic
:class:`MixingMatrix`; :func:`effective_matrix` applies the damping
``(1 - xi) I + xi W`` used at communication rounds, and
:func:`time_varying_matrix` gives the periodic schedule ``W(t)``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraph, SpectrumViolation, XiOutOfRange

STRUCT_TOL = 1e-12
ORTHO_TOL = 1e-10

KINDS = ("ring", "path", "complete", "erdos_renyi", "custom")


@dataclass(frozen=True)
class TopologySpec:
    """Undirected simple graph.

    Edges are stored as sorted ``(i, j)`` pairs with ``i < j``, so symmetry
    holds by construction and self-loops are rejected.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]
    kind: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown topology kind {self.kind!r}")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError(f"edge ({i}, {j}) out of range for {self.n_agents} agents")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(clean))

    def neighbors(self, i: int) -> list[int]:
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_agents, self.n_agents), dtype=bool)
        for i, j in self.edges:
            A[i, j] = A[j, i] = True
        return A

    def is_connected(self) -> bool:
        adj = [self.neighbors(i) for i in range(self.n_agents)]
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n_agents


def ring(n: int) -> TopologySpec:
    if n < 2:
        raise ValueError("ring needs at least 2 agents")
    edges = {(i, (i + 1) % n) for i in range(n)}
    return TopologySpec(n, frozenset(edges), "ring")


def path(n: int) -> TopologySpec:
    return TopologySpec(n, frozenset((i, i + 1) for i in range(n - 1)), "path")


def complete(n: int) -> TopologySpec:
    edges = {(i, j) for i in range(n) for j in range(i + 1, n)}
    return TopologySpec(n, frozenset(edges), "complete")


def erdos_renyi(n: int, p: float, seed: int = 0) -> TopologySpec:
    """G(n, p) random graph; raises :class:`DisconnectedGraph` if the draw is disconnected."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    topo = TopologySpec(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())), "erdos_renyi",
                        {"p": p, "seed": seed})
    if not topo.is_connected():
        raise DisconnectedGraph(f"erdos_renyi(n={n}, p={p}, seed={seed}) is disconnected")
    return topo


def load_edge_list(path_: str | Path, n_agents: int | None = None) -> TopologySpec:
    """Read a whitespace-separated ``i j`` edge list (0-indexed, ``#`` comments allowed)."""
    edges = []
    for lineno, raw in enumerate(Path(path_).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path_}:{lineno}: expected 'i j', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    n = n_agents if n_agents is not None else 1 + max(max(e) for e in edges)
    return TopologySpec(n, frozenset(edges), "custom", {"edge_file": str(path_)})


def make_topology(kind: str, n_agents: int | None = None, **params) -> TopologySpec:
    """Build a topology from a kind name and keyword parameters (config-file entry point)."""
    if kind == "ring":
        return ring(n_agents)
    if kind == "path":
        return path(n_agents)
    if kind == "complete":
        return complete(n_agents)
    if kind == "erdos_renyi":
        return erdos_renyi(n_agents, float(params["p"]), int(params.get("seed", 0)))
    if kind == "custom":
        if "edge_file" in params:
            return load_edge_list(params["edge_file"], n_agents)
        return TopologySpec(n_agents, frozenset(tuple(e) for e in params["edges"]), "custom")
    raise ValueError(f"unknown topology kind {kind!r}")


# ---------------------------------------------------------------------------
# spectra


def sorted_eigh(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix, eigenvalues descending.

    Eigenvectors are sign-normalized so the first entry with magnitude above
    ``1e-8`` is positive; if the top eigenvector is proportional to the
    all-ones vector, it is pinned to exactly ``1/sqrt(N)``.
    """
    N = W.shape[0]
    vals, vecs = np.linalg.eigh((W + W.T) / 2)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order].copy()
    for k in range(N):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-8)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    ones = np.full(N, 1 / np.sqrt(N))
    if abs(abs(vecs[:, 0] @ ones) - 1) < 1e-9:
        vecs[:, 0] = ones
        # remove the rounding-level mean left in the other columns
        rest = vecs[:, 1:] - vecs[:, 1:].mean(axis=0)
        vecs[:, 1:] = rest / np.linalg.norm(rest, axis=0)
    return vals, vecs


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    topology: TopologySpec | None = None

    @classmethod
    def from_array(cls, W: np.ndarray, topology: TopologySpec | None = None) -> MixingMatrix:
        W = np.array(W, dtype=float)
        vals, vecs = sorted_eigh(W)
        for arr in (W, vals, vecs):
            arr.setflags(write=False)
        return cls(W, vals, vecs, topology)

    @property
    def n_agents(self) -> int:
        return self.W.shape[0]

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1]) if self.n_agents > 1 else 0.0

    @property
    def P(self) -> np.ndarray:
        return self.eigenvectors

    def summary(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "eigenvalues": self.eigenvalues.tolist(),
            "lambda2": self.lambda2,
            "lambda_min": float(self.eigenvalues[-1]),
            "spectral_gap": 1.0 - self.lambda2,
        }


@dataclass(frozen=True)
class ClauseResult:
    clause: int
    name: str
    passed: bool
    slack: float
    detail: str = ""


@dataclass(frozen=True)
class SpectralReport:
    clauses: tuple[ClauseResult, ...]
    eigenvalues: np.ndarray
    connected: bool
    doubly_stochastic: bool

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def failed(self) -> list[int]:
        return [c.clause for c in self.clauses if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "connected": self.connected,
            "doubly_stochastic": self.doubly_stochastic,
            "eigenvalues": self.eigenvalues.tolist(),
            "clauses": [
                {"clause": c.clause, "name": c.name, "passed": c.passed, "slack": c.slack, "detail": c.detail}
                for c in self.clauses
            ],
        }


def validate_mixing_matrix(W: np.ndarray, topology: TopologySpec) -> SpectralReport:
    """Check the four admissibility clauses; never raises on failure.

    Slack is positive when a clause holds with margin and non-positive when it fails.
    """
    W = np.asarray(W, dtype=float)
    N = topology.n_agents
    if W.shape != (N, N):
        raise ValueError(f"W has shape {W.shape}, expected ({N}, {N})")
    adj = topology.adjacency()
    off = ~np.eye(N, dtype=bool) & ~adj
    leak = float(np.max(np.abs(W[off]))) if off.any() else 0.0
    c1 = ClauseResult(1, "sparsity", leak <= STRUCT_TOL, STRUCT_TOL - leak,
                      f"max |w_ij| off the edge set = {leak:.3g}")

    asym = float(np.max(np.abs(W - W.T)))
    c2 = ClauseResult(2, "symmetry", asym <= STRUCT_TOL, STRUCT_TOL - asym, f"max |W - W^T| = {asym:.3g}")

    vals = np.sort(np.linalg.eigvalsh((W + W.T) / 2))[::-1]
    resid = float(np.max(np.abs(W @ np.ones(N) - 1)))
    near_one = np.argmin(np.abs(vals - 1))
    rest = np.delete(vals, near_one)
    gap = float(np.min(np.abs(1 - rest))) if rest.size else 1.0
    ok3 = resid <= STRUCT_TOL and gap > STRUCT_TOL
    c3 = ClauseResult(3, "null(I - W) = span(1)", ok3, min(STRUCT_TOL - resid, gap - STRUCT_TOL),
                      f"||(I - W)1||_inf = {resid:.3g}, min |1 - lambda| over other eigenvalues = {gap:.3g}")

    lam_max, lam_min = float(vals[0]), float(vals[-1])
    upper = 1 - lam_max  # 2I >= W + I
    lower = lam_min + 1  # W + I > 0
    ok4 = upper >= -STRUCT_TOL and lower > STRUCT_TOL
    c4 = ClauseResult(4, "2I >= W + I > 0", ok4, min(upper + STRUCT_TOL, lower - STRUCT_TOL),
                      f"lambda_max = {lam_max:.12g}, lambda_min = {lam_min:.12g}")

    ds = resid <= STRUCT_TOL and float(np.max(np.abs(W.sum(axis=0) - 1))) <= STRUCT_TOL
    return SpectralReport((c1, c2, c3, c4), vals, topology.is_connected(), ds)


def build_metropolis_weights(topology: TopologySpec, lazy: bool = False) -> MixingMatrix:
    """Metropolis-Hastings weights ``w_ij = 1 / (1 + max(deg_i, deg_j))``.

    With ``lazy=True`` the result is replaced by ``(W + I) / 2``.

    Raises:
        DisconnectedGraph: the graph is not connected.
        SpectrumViolation: an admissibility clause fails (for the non-lazy
            matrix this is only possible through ``lambda_N <= -1 + 1e-12``).
    """
    if not topology.is_connected():
        raise DisconnectedGraph(f"{topology.kind} graph on {topology.n_agents} agents is disconnected")
    N = topology.n_agents
    deg = topology.degrees()
    W = np.zeros((N, N))
    for i, j in topology.edges:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    W[np.diag_indices(N)] = 1.0 - W.sum(axis=1)
    if lazy:
        W = (W + np.eye(N)) / 2
    report = validate_mixing_matrix(W, topology)
    for c in report.clauses:
        if not c.passed:
            raise SpectrumViolation(c.clause, c.detail + ("" if lazy else "; try the lazy variant (W + I) / 2"))
    if N > 1 and report.eigenvalues[-1] <= -1 + STRUCT_TOL:
        raise SpectrumViolation(4, "lambda_N <= -1 + 1e-12; use the lazy variant (W + I) / 2")
    return MixingMatrix.from_array(W, topology)


# ---------------------------------------------------------------------------
# damping and schedule


def xi_interval(tau: int) -> tuple[float, float]:
    return 0.0, 2.0 / (tau + 3)


def default_xi(tau: int) -> float:
    return 1.0 / (tau + 3)


def rho_interval(tau: int) -> tuple[float, float]:
    return (tau - 1) / (tau + 3), 1.0


@dataclass(frozen=True)
class EffectiveMatrix:
    W_tilde: np.ndarray
    xi: float
    rho: np.ndarray
    tau: int
    base: MixingMatrix

    @property
    def P(self) -> np.ndarray:
        return self.base.eigenvectors


def damped_matrix(W: MixingMatrix, xi: float, tau: int = 1) -> EffectiveMatrix:
    """``(1 - xi) I + xi W`` without any range check (baselines use xi = 1)."""
    N = W.n_agents
    Wt = (1 - xi) * np.eye(N) + xi * W.W
    rho = 1 - xi + xi * W.eigenvalues
    Wt.setflags(write=False)
    rho.setflags(write=False)
    return EffectiveMatrix(Wt, float(xi), rho, int(tau), W)


def effective_matrix(W: MixingMatrix, xi: float, tau: int) -> EffectiveMatrix:
    """Damped mixing matrix for MILE; requires ``0 < xi < 2 / (tau + 3)``."""
    low, high = xi_interval(tau)
    if not (low < xi < high):
        raise XiOutOfRange(xi, low, high)
    eff = damped_matrix(W, xi, tau)
    rlow, rhigh = rho_interval(tau)
    rest = eff.rho[1:]
    # guaranteed by the xi interval and lambda_i in (-1, 1); kept as a guard
    assert np.all((rest > rlow) & (rest < rhigh)), "rho_i outside ((tau-1)/(tau+3), 1)"
    return eff


def time_varying_matrix(W_tilde: EffectiveMatrix, t: int, tau: int) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be non-negative")
    if t % tau == 0:
        return W_tilde.W_tilde
    return np.eye(W_tilde.W_tilde.shape[0])


def is_communication_step(t: int, tau: int) -> bool:
    return t % tau == 0
