r"""Spectral coordinates and the lifted period-``tau`` recursion.

In the eigenbasis ``P`` of ``W`` every disagreement mode ``y_i`` of MILE
obeys the scalar (per-coordinate) recursion

.. math::
    a(t+1) = \rho(t)\,(2a(t) - a(t-1) + b(t) - b(t-1)),
    \qquad \rho(t) = \rho \text{ if } t \equiv 0 \pmod\tau \text{ else } 1,

with ``b(t) = -alpha * h_i(t)``.  Lifting over one period gives the
time-invariant map ``x((k+1)tau+1) = F1 x(k tau+1) + G1 u1(k)`` with
``F1 = [[rho (tau+1), -rho tau], [tau, 1 - tau]]``.  For
``(tau-1)/(tau+3) < rho < 1`` the eigenvalues of ``F1`` are the complex pair
``sqrt(rho) e^{+-i theta}``, and ``F1^s`` has the real trigonometric form
implemented in :func:`f_coefficients`.

Everything here is evaluated in real arithmetic; :func:`simulate_recursion`
is the direct-iteration ground truth the closed forms are checked against.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyTrace, ModeMismatch, RhoOutOfRange, StepsizeTooLarge
from .topology import rho_interval, xi_interval

DEGENERATE_TOL = 1e-10
BOUND_TOL = 1e-12


def check_rho(rho: float, tau: int) -> None:
    low, high = rho_interval(tau)
    if not (low < rho < high):
        raise RhoOutOfRange(rho, low, high)


def discriminant(rho: float, tau: int) -> float:
    """``[rho (tau+1) + 1 - tau]^2 - 4 rho``; negative means complex eigenvalues of ``F1``."""
    return (rho * (tau + 1) + 1 - tau) ** 2 - 4 * rho


def lifted_matrix(rho: float, tau: int) -> np.ndarray:
    return np.array([[rho * (tau + 1), -rho * tau], [tau, 1.0 - tau]])


def period_matrix(rho_t: float) -> np.ndarray:
    """One-step state matrix of the periodic system, state ``[a(t), a(t-1)]``."""
    return np.array([[2 * rho_t, -rho_t], [1.0, 0.0]])


@dataclass(frozen=True)
class LiftedPeriodicSystem:
    rho: float
    tau: int
    F1: np.ndarray
    cos_theta: float
    sin_theta: float
    theta: float
    mu: tuple[complex, complex]
    degenerate: bool = False

    @classmethod
    def build(cls, rho: float, tau: int) -> LiftedPeriodicSystem:
        check_rho(rho, tau)
        disc = discriminant(rho, tau)
        sr = math.sqrt(rho)
        c = (rho * (tau + 1) + 1 - tau) / (2 * sr)
        s = math.sqrt(max(-disc, 0.0)) / (2 * sr)
        theta = math.atan2(s, c)
        mu = (complex(sr * c, sr * s), complex(sr * c, -sr * s))
        return cls(rho, tau, lifted_matrix(rho, tau), c, s, theta, mu, abs(disc) < DEGENERATE_TOL)

    @property
    def modulus(self) -> float:
        return math.sqrt(self.rho)


def _sin_ratio(m: int, system: LiftedPeriodicSystem) -> float:
    """``sin(m theta) / sin(theta)`` for integer ``m`` (may be negative)."""
    if m == 0:
        return 0.0
    if not system.degenerate:
        return math.sin(m * system.theta) / system.sin_theta
    # near theta = 0 evaluate the Chebyshev form U_{|m|-1}(cos theta), which has no division
    sign = 1.0 if m > 0 else -1.0
    c = min(system.cos_theta, 1.0)
    u_prev, u = 0.0, 1.0
    for _ in range(abs(m) - 1):
        u_prev, u = u, 2 * c * u - u_prev
    return sign * u


def _f11(s: int, sys_: LiftedPeriodicSystem) -> float:
    return _sin_ratio(s + 1, sys_) + (sys_.tau - 1) * _sin_ratio(s, sys_) / math.sqrt(sys_.rho)


def _f12(s: int, sys_: LiftedPeriodicSystem) -> float:
    return -sys_.tau * math.sqrt(sys_.rho) * _sin_ratio(s, sys_)


def _f21(s: int, sys_: LiftedPeriodicSystem) -> float:
    return sys_.tau * _sin_ratio(s, sys_) / math.sqrt(sys_.rho)


def _f22(s: int, sys_: LiftedPeriodicSystem) -> float:
    return -_sin_ratio(s - 1, sys_) - (sys_.tau - 1) * _sin_ratio(s, sys_) / math.sqrt(sys_.rho)


def f_coefficients(s: int, system: LiftedPeriodicSystem) -> np.ndarray:
    """``[[F11(s), F12(s)], [F21(s), F22(s)]]`` so that ``F1^s = sqrt(rho)^s * result``."""
    return np.array([[_f11(s, system), _f12(s, system)], [_f21(s, system), _f22(s, system)]])


def lifted_matrix_power(rho: float, tau: int, s: int) -> np.ndarray:
    """``F1^s`` from the trigonometric closed form."""
    if s < 0:
        raise ValueError("s must be a non-negative integer")
    system = LiftedPeriodicSystem.build(rho, tau)
    return math.sqrt(rho) ** s * f_coefficients(s, system)


def simulate_recursion(rho: float, tau: int, a0, a1, b) -> np.ndarray:
    """Iterate ``a(t+1) = rho(t) (2a(t) - a(t-1) + b(t) - b(t-1))`` for ``t = 1, ..., T-1``.

    ``b`` holds ``b(0), ..., b(T-1)``; returns ``a(0), ..., a(T)``.
    """
    b = np.asarray(b, dtype=float)
    T = b.shape[0]
    a = np.zeros((T + 1,) + b.shape[1:])
    a[0], a[1] = a0, a1
    for t in range(1, T):
        r = rho if t % tau == 0 else 1.0
        a[t + 1] = r * (2 * a[t] - a[t - 1] + b[t] - b[t - 1])
    return a


def _g_terms(s: int, rho: float, tau: int, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g11 = np.zeros(b.shape[1:])
    g21 = np.zeros(b.shape[1:])
    for j in range(1, tau + 1):
        diff = b[s * tau + tau + 1 - j] - b[s * tau + tau - j]
        g11 = g11 + j * diff
        g21 = g21 + (j - 1) * diff
    return rho * g11, g21


def closed_form_sequence(rho: float, tau: int, a0, a1, b) -> np.ndarray:
    """Evaluate ``a(0), ..., a(T)`` from the lifted closed form, ``T = len(b)``.

    ``a(k tau + 1)`` and ``a(k tau)`` come from the ``F1^k`` expansion with the
    per-period input terms ``G11(s), G21(s)``; intermediate times
    ``a(k tau + p)``, ``1 <= p <= tau``, are reconstructed from those two.
    ``b`` may carry trailing coordinate axes, in which case ``a0`` and ``a1``
    broadcast against them.

    Raises:
        RhoOutOfRange: ``rho`` outside ``((tau-1)/(tau+3), 1)``.
    """
    system = LiftedPeriodicSystem.build(rho, tau)
    b = np.asarray(b, dtype=float)
    T = b.shape[0]
    if T < 1:
        raise ValueError("b must contain at least b(0)")
    sr = math.sqrt(rho)
    a0 = np.broadcast_to(np.asarray(a0, dtype=float), b.shape[1:])
    a1 = np.broadcast_to(np.asarray(a1, dtype=float), b.shape[1:])

    k_max = (T - 1) // tau
    F = [f_coefficients(s, system) for s in range(k_max + 2)]
    G = [_g_terms(s, rho, tau, b) for s in range(k_max) if s * tau + tau < T]

    def anchors(k: int):
        top = sr ** k * (F[k][0, 0] * a1 + F[k][0, 1] * a0)
        bot = sr ** k * (F[k][1, 0] * a1 + F[k][1, 1] * a0)
        for s in range(k):
            g11, g21 = G[s]
            w = sr ** (k - 1 - s)
            Fk = F[k - 1 - s]
            top = top + w * (Fk[0, 0] * g11 + Fk[0, 1] * g21)
            bot = bot + w * (Fk[1, 0] * g11 + Fk[1, 1] * g21)
        return top, bot

    a = np.zeros((T + 1,) + b.shape[1:])
    a[0] = a0
    for k in range(k_max + 1):
        ak1, ak = anchors(k)
        for p in range(1, tau + 1):
            t = k * tau + p
            if t > T:
                break
            drift = np.zeros(b.shape[1:])
            for q in range(1, p):
                for j in range(1, q + 1):
                    drift = drift + (b[k * tau + j] - b[k * tau + j - 1])
            a[t] = p * ak1 - (p - 1) * ak + drift
    return a


# ---------------------------------------------------------------------------
# spectral coordinates


@dataclass(frozen=True)
class SpectralCoordinates:
    """Mode coordinates ``Y = P^T X`` (row ``i`` is ``y_{i+1}``); optionally ``H = P^T grad``."""

    Y: np.ndarray
    H: np.ndarray | None = None

    def mode_norms(self) -> np.ndarray:
        return np.linalg.norm(self.Y, axis=1)

    def disagreement(self) -> float:
        """``sum_{i >= 2} ||y_i||^2``."""
        return float(np.sum(self.Y[1:] ** 2))


def spectral_transform(X: np.ndarray, P: np.ndarray, G: np.ndarray | None = None) -> SpectralCoordinates:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or P.shape != (X.shape[0], X.shape[0]):
        raise DimensionMismatch(f"state {X.shape} incompatible with basis {P.shape}")
    H = None if G is None else P.T @ np.asarray(G, dtype=float)
    return SpectralCoordinates(P.T @ X, H)


def inverse_spectral_transform(coords: SpectralCoordinates | np.ndarray, P: np.ndarray) -> np.ndarray:
    Y = coords.Y if isinstance(coords, SpectralCoordinates) else np.asarray(coords)
    if P.shape[1] != Y.shape[0]:
        raise DimensionMismatch(f"coordinates {Y.shape} incompatible with basis {P.shape}")
    return P @ Y


def consensus_identity_error(X: np.ndarray, P: np.ndarray) -> tuple[float, float]:
    """Relative errors of the two snapshot identities.

    Returns ``(disagreement_err, mean_err)`` where the first compares
    ``sum_i ||xbar - x_i||^2`` with ``sum_{i>=2} ||y_i||^2`` and the second
    compares ``y_1`` with ``sqrt(N) xbar``.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    if P.shape != (N, N):
        raise DimensionMismatch(f"state {X.shape} incompatible with basis {P.shape}")
    # extended precision so the check resolves disagreements far below ||X||
    Xl = X.astype(np.longdouble)
    Y = P.astype(np.longdouble).T @ Xl
    xbar_l = Xl.mean(axis=0)
    direct = float(np.sum((Xl - xbar_l) ** 2))
    modal = float(np.sum(Y[1:] ** 2))
    xbar = X.mean(axis=0)
    scale = max(direct, modal)
    dis_err = abs(direct - modal) / scale if scale > 0 else 0.0
    ref = math.sqrt(N) * xbar
    mean_err = float(np.linalg.norm(np.asarray(Y[0], dtype=float) - ref) / max(np.linalg.norm(ref), 1.0))
    return dis_err, mean_err


# ---------------------------------------------------------------------------
# stability


@dataclass(frozen=True)
class ModeStability:
    index: int
    lam: float
    rho: float
    discriminant: float
    mu_abs: tuple[float, float]
    sqrt_rho: float
    vieta_product: float
    in_interval: bool
    stable: bool


@dataclass(frozen=True)
class StabilityReport:
    xi: float
    tau: int
    xi_admissible: bool
    rho_interval: tuple[float, float]
    modes: tuple[ModeStability, ...]

    @property
    def passed(self) -> bool:
        """Sufficient condition: xi inside its open interval and every mode complex with ``|mu| < 1``."""
        return self.xi_admissible and all(m.in_interval and m.discriminant < 0 for m in self.modes)

    @property
    def spectral_radius(self) -> float:
        return max((max(m.mu_abs) for m in self.modes), default=0.0)

    def to_dict(self) -> dict:
        return {
            "xi": self.xi,
            "tau": self.tau,
            "xi_admissible": self.xi_admissible,
            "xi_interval": list(xi_interval(self.tau)),
            "rho_interval": list(self.rho_interval),
            "passed": self.passed,
            "spectral_radius": self.spectral_radius,
            "modes": [m.__dict__ for m in self.modes],
        }


def stability_report(xi: float, tau: int, spectrum) -> StabilityReport:
    """Per-mode eigen-analysis of ``F1`` for ``rho_i = 1 - xi + xi lambda_i``, ``i >= 2``.

    ``|mu|`` is taken from the actual roots of ``mu^2 - [rho(tau+1) + 1 - tau] mu + rho``,
    so an unstable (real-root) mode reports its true growth factor.
    """
    lam = np.sort(np.asarray(spectrum, dtype=float))[::-1]
    low, high = xi_interval(tau)
    rlow, rhigh = rho_interval(tau)
    modes = []
    for idx, l in enumerate(lam[1:], start=2):
        r = 1 - xi + xi * l
        disc = discriminant(r, tau)
        roots = np.roots([1.0, -(r * (tau + 1) + 1 - tau), r])
        mags = tuple(sorted((float(abs(z)) for z in roots), reverse=True))
        prod = complex(roots[0] * roots[1])
        in_int = rlow < r < rhigh
        modes.append(ModeStability(
            idx, float(l), float(r), float(disc), mags, math.sqrt(r) if r >= 0 else float("nan"),
            float(prod.real), in_int, max(mags) < 1,
        ))
    return StabilityReport(float(xi), int(tau), low < xi < high, (rlow, rhigh), tuple(modes))


# ---------------------------------------------------------------------------
# convergence constants


def _disc_root(r: float, tau: int) -> float:
    return math.sqrt(-discriminant(r, tau))


def _a_constants(rho_modes: np.ndarray, rho: float, tau: int) -> tuple[float, float, float]:
    A1 = max(2 * tau / _disc_root(r, tau) for r in rho_modes)
    sr = math.sqrt(rho)
    d = _disc_root(rho, tau)
    A3 = max((2 * sr + 2) / d, 2 * sr * (1 + abs(tau * sr - (tau - 1) / sr)) / d)
    return A1, A3, max(A1, A3)


def _b_constants(rho: float, tau: int, A2: float, A4: float) -> tuple[float, float]:
    sq = tau * (tau + 1) * (2 * tau + 1)
    with np.errstate(over="ignore", divide="ignore"):
        B1 = sq / (2 * (1 - rho)) * A4 ** 2 * A2 ** 2 if rho < 1 else math.inf
        B2 = 3 * tau ** 4 + tau * sq * (rho * tau + tau - 1) ** 2 / (2 * (1 - math.sqrt(rho)) ** 2) * A4 ** 2 \
            if rho < 1 else math.inf
    return float(B1), float(B2)


def stepsize_bounds(spectrum, xi: float, tau: int, L: float) -> dict:
    """Admissible stepsizes ``1 / (sqrt(5 B2) L)`` (exact) and ``1 / (sqrt(13 B2) L)`` (stochastic).

    ``B2`` does not depend on the initialization, so neither bound does.
    """
    lam = np.sort(np.asarray(spectrum, dtype=float))[::-1]
    rho_modes = 1 - xi + xi * lam[1:]
    for r in rho_modes:
        check_rho(float(r), tau)
    rho = float(rho_modes[0])
    _, _, A4 = _a_constants(rho_modes, rho, tau)
    _, B2 = _b_constants(rho, tau, 0.0, A4)
    return {"B2": B2, "alpha_exact": 1 / (math.sqrt(5 * B2) * L), "alpha_stochastic": 1 / (math.sqrt(13 * B2) * L)}


@dataclass(frozen=True)
class ConvergenceConstants:
    rho: float
    rho_modes: np.ndarray = field(repr=False)
    tau: int
    alpha: float
    L: float
    n_agents: int
    A1: float
    A2: float
    A3: float
    A4: float
    A5: float
    B1: float
    B2: float
    B3: float
    B4: float
    C1: float
    C2: float
    alpha_exact: float
    alpha_stochastic: float
    mode: str
    mean_grad0_sq: float = 0.0
    x0_fro_sq: float = 0.0
    x1_fro_sq: float = 0.0
    checks: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        keys = ["rho", "tau", "alpha", "L", "n_agents", "A1", "A2", "A3", "A4", "A5", "B1", "B2", "B3", "B4",
                "C1", "C2", "alpha_exact", "alpha_stochastic", "mode", "mean_grad0_sq", "x0_fro_sq", "x1_fro_sq"]
        out = {k: getattr(self, k) for k in keys}
        out["rho_modes"] = self.rho_modes.tolist()
        out["checks"] = self.checks
        out["notes"] = list(self.notes)
        return out


def _leq(a: float, b: float) -> bool:
    return a <= b * (1 + BOUND_TOL) + BOUND_TOL


def compute_constants(spectrum, xi: float, tau: int, alpha: float, L: float, Y0: np.ndarray, Y1: np.ndarray,
                      *, mean_grad0_sq: float = 0.0, mode: str = "exact") -> ConvergenceConstants:
    """All constants entering the consensus and optimality bounds.

    ``Y0`` and ``Y1`` are the mode coordinates of ``X(0)`` and ``X(1)`` (rows
    are modes, row 0 the average mode); ``mean_grad0_sq`` is
    ``||mean_i grad f_i(x_i(0))||^2``.  The geometric factor uses
    ``rho = 1 - xi + xi lambda_2`` while ``A1`` maximizes over every mode.

    ``mode="exact"`` requires ``B3 > 0``; ``mode="stochastic"`` requires
    ``B4 > 0``.  ``checks`` records the inequality chains of the convergence
    proofs evaluated at ``alpha`` (they are only guaranteed when ``alpha`` is
    at or below the corresponding bound).

    Raises:
        StepsizeTooLarge: the mode's leading coefficient is non-positive.
        RhoOutOfRange: some ``rho_i`` lies outside the admissible interval.
    """
    if mode not in ("exact", "stochastic"):
        raise ValueError(f"mode must be 'exact' or 'stochastic', got {mode!r}")
    lam = np.sort(np.asarray(spectrum, dtype=float))[::-1]
    N = lam.size
    Y0 = np.asarray(Y0, dtype=float).reshape(N, -1)
    Y1 = np.asarray(Y1, dtype=float).reshape(N, -1)
    rho_modes = 1 - xi + xi * lam[1:]
    for r in rho_modes:
        check_rho(float(r), tau)
    rho = float(rho_modes[0])
    notes = []
    if 1 - rho < 1e-8:
        warnings.warn(f"rho = {rho!r} is within 1e-8 of 1; B1 and B2 blow up", RuntimeWarning, stacklevel=2)
        notes.append("rho near 1: B1, B2 overflow-guarded")

    A1, A3, A4 = _a_constants(rho_modes, rho, tau)
    n0 = np.linalg.norm(Y0[1:], axis=1)
    n1 = np.linalg.norm(Y1[1:], axis=1)
    A2 = float(np.max(n0 + n1)) if N > 1 else 0.0
    x0_sq = float(np.sum(Y0 ** 2))  # ||X(0)||_F^2, P orthogonal
    x1_sq = float(np.sum(Y1 ** 2))
    A5 = 2 * x1_sq + 2 * x0_sq
    B1, B2 = _b_constants(rho, tau, A2, A4)
    aL2 = (alpha * L) ** 2
    B3 = 1 - 4 * aL2 * B2
    B4 = 1 - 12 * aL2 * B2
    C1 = aL2 * N * B2 * (alpha ** 2 * mean_grad0_sq + 2 * A2 ** 2) + N * B1
    C2 = 6 * aL2 * N * B2 * (alpha ** 2 * mean_grad0_sq + A5) + N * B1
    alpha_exact = 1 / (math.sqrt(5 * B2) * L)
    alpha_stoch = 1 / (math.sqrt(13 * B2) * L)

    if mode == "exact" and not B3 > 0:
        raise StepsizeTooLarge(f"B3 = 1 - 4 alpha^2 L^2 B2 = {B3:.3g} <= 0 (alpha = {alpha:.3g}, "
                               f"bound {alpha_exact:.3g})")
    if mode == "stochastic" and not B4 > 0:
        raise StepsizeTooLarge(f"B4 = 1 - 12 alpha^2 L^2 B2 = {B4:.3g} <= 0 (alpha = {alpha:.3g}, "
                               f"bound {alpha_stoch:.3g})")

    checks: dict[str, bool] = {}
    if mode == "exact":
        checks["alpha_within_bound"] = _leq(alpha, alpha_exact)
        checks["B3_geq_a2L2B2"] = _leq(aL2 * B2, B3)
        checks["B2_over_B3_leq_inv_a2L2"] = _leq(B2 / B3, 1 / aL2)
        checks["B1_over_B3_leq_init_term"] = _leq(B1 / B3, (2 * x0_sq + 2 * x1_sq) / (aL2 * rho ** 2 * tau ** 3))
        checks["leading_coeff_positive"] = 1 - alpha * L - alpha ** 4 * L ** 4 * B2 / B3 > 0
        checks["leading_coeff_gt_half"] = 1 - alpha * L - alpha ** 4 * L ** 4 * B2 / B3 > 0.5
    else:
        checks["alpha_within_bound"] = _leq(alpha, alpha_stoch)
        checks["B4_geq_a2L2B2"] = _leq(aL2 * B2, B4)
        checks["leading_coeff_gt_half"] = 1 - alpha * L - 6 * alpha ** 4 * L ** 4 * B2 / B4 > 0.5
        checks["B4_geq_1_over_13"] = _leq(1 / 13, B4)
        checks["B1_over_B4_leq_init_term"] = _leq(B1 / B4, (2 * x0_sq + 2 * x1_sq) / (aL2 * rho ** 2 * tau ** 3))
    checks["A2_sq_leq_2x0_2x1"] = _leq(A2 ** 2, 2 * x0_sq + 2 * x1_sq)

    if np.any(np.abs(rho_modes - rho) > 0):
        notes.append("A1 maximizes over all modes; A3, B1, B2 use the uniform rho of lambda_2")

    return ConvergenceConstants(
        rho, rho_modes, int(tau), float(alpha), float(L), N, A1, A2, A3, A4, A5, B1, B2, B3, B4, C1, C2,
        alpha_exact, alpha_stoch, mode, float(mean_grad0_sq), x0_sq, x1_sq, checks, tuple(notes),
    )


# ---------------------------------------------------------------------------
# theorem right-hand sides

BOUND_MODES = ("exact_t1", "consensus_t2", "stoch_t3", "stoch_consensus_t4")


@dataclass(frozen=True)
class BoundInputs:
    """Run quantities the bounds are evaluated from."""

    K: int
    tau: int
    alpha: float
    L: float
    rho: float
    sigma: float
    f_bar1: float
    f_star: float
    x0_fro_sq: float
    x1_fro_sq: float
    mean_grad0_sq: float
    B2: float


def bound_terms(mode: str, q: BoundInputs) -> dict[str, float]:
    """Right-hand side of the selected bound, term by term."""
    K, tau, a, L, rho, s2 = q.K, q.tau, q.alpha, q.L, q.rho, q.sigma ** 2
    gap = q.f_bar1 - q.f_star
    xs = q.x0_fro_sq + q.x1_fro_sq
    g0 = q.mean_grad0_sq
    if mode == "exact_t1":
        return {
            "objective_gap": 2 * gap / (tau * a * K),
            "initial_gradient": g0 / (tau ** 3 * K),
            "initial_state": 4 * xs / (tau ** 3 * a ** 2 * K),
            "initial_state_rho": 2 * xs / (a ** 2 * rho ** 2 * tau ** 4 * K),
        }
    if mode == "consensus_t2":
        return {
            "objective_gap": 4 * a * gap / (tau * K),
            "initial_gradient": 3 * a ** 2 * g0 / (tau ** 3 * K),
            "initial_state": 12 * xs / (tau ** 3 * K),
            "initial_state_rho": 6 * xs / (rho ** 2 * tau ** 4 * K),
        }
    if mode == "stoch_t3":
        return {
            "objective_gap": 2 * gap / (a * tau * K),
            "initial_state_rho": 2 * xs / (a ** 2 * rho ** 2 * tau ** 4 * K),
            "initial_state": 12 * xs / (tau ** 3 * a ** 2 * K),
            "initial_gradient": 6 * g0 / (tau ** 3 * K),
            "noise_linear": L * a * s2,
            "noise_quadratic": 156 * q.B2 * a ** 2 * L ** 2 * s2,
        }
    if mode == "stoch_consensus_t4":
        return {
            "objective_gap": 24 * a * gap / (tau * K),
            "initial_gradient": 78 * a ** 2 * g0 / (tau ** 3 * K),
            "initial_state_rho": 26 * xs / (rho ** 2 * tau ** 4 * K),
            "noise_B2": 2028 * q.B2 * a ** 2 * s2,
            "initial_state": 156 * xs / (tau ** 3 * K),
            "noise_alpha": 6 * a ** 2 * s2,
        }
    raise ValueError(f"unknown bound mode {mode!r}")


def noise_floor(mode: str, q: BoundInputs) -> float:
    """Non-vanishing part (K -> infinity) of a stochastic bound."""
    terms = bound_terms(mode, q)
    return float(sum(v for k, v in terms.items() if k.startswith("noise")))


@dataclass(frozen=True)
class BoundReport:
    mode: str
    lhs: float
    rhs: float
    terms: dict
    K: int
    T: int
    satisfied: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {"mode": self.mode, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack, "terms": self.terms,
                "K": self.K, "T": self.T, "satisfied": self.satisfied}


def _lhs_series(trace, final, name: str) -> np.ndarray:
    vals = [getattr(r, name) for r in trace if r.t >= 1]
    if final is not None:
        vals.append(getattr(final, name))
    return np.asarray(vals, dtype=float)


def theorem_bound(trace, constants: ConvergenceConstants, mode: str, *, f_bar1: float, f_star: float,
                  sigma: float = 0.0, final=None) -> BoundReport:
    """Compare a trace's time average with the selected bound's right-hand side.

    The left-hand side is ``(1/T) sum_{t=1}^{T}`` of ``grad_norm_avg``
    (``exact_t1``, ``stoch_t3``) or ``consensus_err`` (``consensus_t2``,
    ``stoch_consensus_t4``); ``final`` supplies the record at ``t = T`` that
    follows the last trace row.

    Raises:
        ModeMismatch: an exact-gradient bound applied to ``sigma > 0``, or the
            run's stepsize exceeds the bound's admissible stepsize.
        EmptyTrace: no rows at ``t >= 1``.
    """
    if mode not in BOUND_MODES:
        raise ValueError(f"unknown bound mode {mode!r}")
    exact = mode in ("exact_t1", "consensus_t2")
    if exact and sigma > 0:
        raise ModeMismatch(f"{mode} assumes exact gradients but the run has sigma = {sigma}")
    limit = constants.alpha_exact if exact else constants.alpha_stochastic
    if not _leq(constants.alpha, limit):
        raise ModeMismatch(f"alpha = {constants.alpha:.6g} exceeds the admissible {limit:.6g} for {mode}; "
                           "the comparison would be vacuous")
    name = "grad_norm_avg" if mode in ("exact_t1", "stoch_t3") else "consensus_err"
    series = _lhs_series(trace, final, name)
    if series.size == 0:
        raise EmptyTrace("no trace rows at t >= 1")
    tau = constants.tau
    T = series.size
    K = T // tau - 1
    if K < 1 or T != tau + tau * K:
        raise ValueError(f"trace length T = {T} is not tau + tau K for tau = {tau}")
    q = BoundInputs(K, tau, constants.alpha, constants.L, constants.rho, sigma, f_bar1, f_star,
                    constants.x0_fro_sq, constants.x1_fro_sq, constants.mean_grad0_sq, constants.B2)
    terms = bound_terms(mode, q)
    lhs = float(series.mean())
    rhs = float(sum(terms.values()))
    return BoundReport(mode, lhs, rhs, terms, K, T, lhs <= rhs)


def consensus_intermediate_bound(constants: ConvergenceConstants, T: int, f_bar1: float, f_star: float) -> float:
    """``3 C1 / (B3 N T) + 4 alpha (f(xbar(1)) - f*) / T``.

    This is the consensus inequality before the constants are simplified
    into the closed-form right-hand side of ``consensus_t2``; reported as a
    diagnostic next to that bound.
    """
    c = constants
    return 3 * c.C1 / (c.B3 * c.n_agents * T) + 4 * c.alpha * (f_bar1 - f_star) / T
