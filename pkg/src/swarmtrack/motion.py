"""Kinematic prediction (constant velocity, current statistical model) and
Kalman correction.

CSM state layout is ``[x, vx, ax, y, vy, ay, z, vz, az]``; the CV layout is
``[x, vx, y, vy, z, vz]``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import SingularInnovation

RAYLEIGH_FACTOR = (4.0 - math.pi) / math.pi
POS_IDX = np.array([0, 3, 6])
VEL_IDX = np.array([1, 4, 7])
ACC_IDX = np.array([2, 5, 8])

# Below this value of alpha*dt the closed forms lose too many digits to
# cancellation and the Taylor series is used instead.
_SERIES_CUTOFF = 1.0
_SERIES_TERMS = 40


class _ExpBracket:
    """``B(x) / x**p`` where ``B`` is a sum of ``c * x**n * exp(-a * x)`` terms.

    For small ``x`` the value comes from a Taylor series whose coefficients
    are built exactly with rationals, so the leading cancellations of ``B``
    are resolved before any floating-point arithmetic happens.
    """

    def __init__(self, terms, p: int):
        self.terms = [(Fraction(c), n, Fraction(a)) for c, n, a in terms]
        self.p = p
        coeffs = [Fraction(0)] * (_SERIES_TERMS + p + 1)
        for c, n, a in self.terms:
            fact = 1
            for k in range(_SERIES_TERMS + p + 1 - n):
                if k:
                    fact *= k
                coeffs[k + n] += c * (-a) ** k / fact
        if any(coeffs[:p]):
            raise ValueError("bracket does not vanish to the requested order")
        self.series = [float(c) for c in coeffs[p:]]

    def __call__(self, x: float) -> float:
        if x < _SERIES_CUTOFF:
            acc = 0.0
            for c in reversed(self.series):
                acc = acc * x + c
            return acc
        total = 0.0
        for c, n, a in self.terms:
            total += float(c) * x ** n * math.exp(-float(a) * x)
        return total / x ** self.p


# Entries of one CSM axis, each as (bracket, power of dt).
_G02 = _ExpBracket([(-1, 0, 0), (1, 1, 0), (1, 0, 1)], 2)          # dt^2
_G12 = _ExpBracket([(1, 0, 0), (-1, 0, 1)], 1)                     # dt
_U0 = _ExpBracket([(-1, 1, 0), (Fraction(1, 2), 2, 0), (1, 0, 0), (-1, 0, 1)], 2)  # dt^2
_U1 = _ExpBracket([(1, 1, 0), (-1, 0, 0), (1, 0, 1)], 1)           # dt
_Q11 = _ExpBracket([(1, 0, 0), (-1, 0, 2), (2, 1, 0), (Fraction(2, 3), 3, 0),
                    (-2, 2, 0), (-4, 1, 1)], 5)                     # dt^5 / 2
_Q12 = _ExpBracket([(1, 0, 2), (1, 0, 0), (-2, 0, 1), (2, 1, 1),
                    (-2, 1, 0), (1, 2, 0)], 4)                      # dt^4 / 2
_Q13 = _ExpBracket([(1, 0, 0), (-1, 0, 2), (-2, 1, 1)], 3)         # dt^3 / 2
_Q22 = _ExpBracket([(4, 0, 1), (-3, 0, 0), (-1, 0, 2), (2, 1, 0)], 3)  # dt^3 / 2
_Q23 = _ExpBracket([(1, 0, 2), (1, 0, 0), (-2, 0, 1)], 2)          # dt^2 / 2
_Q33 = _ExpBracket([(1, 0, 0), (-1, 0, 2)], 1)                     # dt / 2


@dataclass(frozen=True)
class CsmParams:
    """Current-statistical-model parameters.

    Args:
        alpha: Reciprocal maneuver time constant per axis (1/s).
        a_max: Maximum possible acceleration per axis.
        dt: Sampling interval (s).
    """

    alpha: tuple = (5.0, 5.0, 5.0)
    a_max: tuple = (5.0, 5.0, 5.0)
    dt: float = 0.1

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.broadcast_to(np.asarray(self.alpha, float), (3,)))
        a_max = tuple(float(a) for a in np.broadcast_to(np.asarray(self.a_max, float), (3,)))
        if min(alpha) <= 0 or min(a_max) <= 0 or not self.dt > 0:
            raise ValueError("alpha, a_max and dt must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "a_max", a_max)
        object.__setattr__(self, "dt", float(self.dt))


@dataclass(frozen=True)
class ObservationModel:
    """Linear position observation ``y = H x + n``, ``n ~ N(0, R)``."""

    H: np.ndarray
    R: np.ndarray

    @classmethod
    def position(cls, R) -> "ObservationModel":
        R = np.asarray(R, dtype=float)
        if R.ndim == 0:
            R = float(R) * np.eye(3)
        elif R.ndim == 1:
            R = np.diag(R)
        H = np.zeros((3, 9))
        H[[0, 1, 2], POS_IDX] = 1.0
        return cls(H, R)


def cv_transition(dt: float) -> np.ndarray:
    F1 = np.array([[1.0, dt], [0.0, 1.0]])
    return np.kron(np.eye(3), F1)


def predict_cv(state, dt: float) -> np.ndarray:
    """Constant-velocity prediction of a 6-vector ``[x, vx, y, vy, z, vz]``."""
    s = np.asarray(state, dtype=float)
    out = s.copy()
    out[[0, 2, 4]] += dt * s[[1, 3, 5]]
    return out


def cv_to_csm(state6) -> np.ndarray:
    s = np.zeros(9)
    s[POS_IDX] = state6[[0, 2, 4]]
    s[VEL_IDX] = state6[[1, 3, 5]]
    return s


def csm_to_cv(state9) -> np.ndarray:
    s = np.asarray(state9, dtype=float)
    return np.column_stack([s[POS_IDX], s[VEL_IDX]]).ravel()


@lru_cache(maxsize=256)
def _axis_transition(alpha: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    x = alpha * dt
    e = math.exp(-x)
    G1 = np.array([[1.0, dt, dt * dt * _G02(x)],
                   [0.0, 1.0, dt * _G12(x)],
                   [0.0, 0.0, e]])
    u1 = np.array([dt * dt * _U0(x), dt * _U1(x), -math.expm1(-x)])
    return G1, u1


def csm_transition(p: CsmParams) -> tuple[np.ndarray, np.ndarray]:
    """State transition ``G`` (9x9) and input matrix ``U`` (9x3)."""
    G, U = _csm_transition(p)
    return G.copy(), U.copy()


@lru_cache(maxsize=64)
def _csm_transition(p: CsmParams) -> tuple[np.ndarray, np.ndarray]:
    G = np.zeros((9, 9))
    U = np.zeros((9, 3))
    for i, a in enumerate(p.alpha):
        G1, u1 = _axis_transition(a, p.dt)
        G[3 * i:3 * i + 3, 3 * i:3 * i + 3] = G1
        U[3 * i:3 * i + 3, i] = u1
    return G, U


def rayleigh_variance(a_bar: float, a_max: float) -> float:
    """Acceleration variance of the modified Rayleigh model.

    ``a_bar == 0`` takes the positive branch; both branches agree there.
    """
    if a_bar >= 0:
        return RAYLEIGH_FACTOR * (a_max - a_bar) ** 2
    return RAYLEIGH_FACTOR * (-a_max - a_bar) ** 2


@lru_cache(maxsize=256)
def _axis_noise_shape(alpha: float, dt: float) -> np.ndarray:
    """The symmetric ``[q_jk]`` matrix for one axis."""
    x = alpha * dt
    q11 = dt ** 5 * _Q11(x) / 2
    q12 = dt ** 4 * _Q12(x) / 2
    q13 = dt ** 3 * _Q13(x) / 2
    q22 = dt ** 3 * _Q22(x) / 2
    q23 = dt ** 2 * _Q23(x) / 2
    q33 = dt * _Q33(x) / 2
    return np.array([[q11, q12, q13], [q12, q22, q23], [q13, q23, q33]])


def csm_process_noise(p: CsmParams, a_bar) -> np.ndarray:
    """Block-diagonal process noise ``Q`` driven by the current mean acceleration."""
    a_bar = np.broadcast_to(np.asarray(a_bar, dtype=float), (3,))
    Q = np.zeros((9, 9))
    for i, (a, amax) in enumerate(zip(p.alpha, p.a_max)):
        sigma2 = rayleigh_variance(a_bar[i], amax)
        Q[3 * i:3 * i + 3, 3 * i:3 * i + 3] = 2.0 * a * sigma2 * _axis_noise_shape(a, p.dt)
    return Q


def clamp_mean_acceleration(acc, p: CsmParams) -> np.ndarray:
    a_max = np.asarray(p.a_max)
    return np.clip(np.asarray(acc, dtype=float), -a_max, a_max)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict_csm(state, P, p: CsmParams, a_bar) -> tuple[np.ndarray, np.ndarray]:
    """CSM prediction of state and covariance."""
    G, U = _csm_transition(p)
    a_bar = np.broadcast_to(np.asarray(a_bar, dtype=float), (3,))
    Q = csm_process_noise(p, a_bar)
    s = G @ np.asarray(state, dtype=float) + U @ a_bar
    P_pred = symmetrize(G @ P @ G.T + Q)
    return s, P_pred


def kalman_correct(s_pred, P_pred, y, model: ObservationModel) -> tuple[np.ndarray, np.ndarray]:
    """Kalman measurement update.

    Raises:
        SingularInnovation: if ``H P H^T + R`` cannot be inverted reliably.
    """
    H, R = model.H, model.R
    S = H @ P_pred @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e14:
        raise SingularInnovation("innovation covariance is numerically singular")
    PHt = P_pred @ H.T
    K = np.linalg.solve(S, PHt.T).T
    innovation = np.asarray(y, dtype=float) - H @ s_pred
    s = s_pred + K @ innovation
    P = symmetrize(P_pred - K @ H @ P_pred)
    return s, P
