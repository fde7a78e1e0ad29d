"""Conservative multi-body dynamics: energy, accelerations, time integration
and linear modal analysis around a stable equilibrium.

Every model is written in the form ``M(q) qdd + c(q, qd) + grad V(q) = 0``
with the potential shifted so that ``V(q_eq) = 0``.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import (
    ContractViolation,
    ConvergenceError,
    DivergenceError,
    SaddlePointError,
    SingularMassError,
    StiffnessError,
    UnstableEquilibriumError,
)

DEFAULT_RTOL = 5e-11
DEFAULT_ATOL = 5e-11
DEFAULT_SAMPLES = 512
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class State:
    """Configuration ``q`` and velocity ``qd`` of an n-DoF model."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        qd = np.atleast_1d(np.asarray(self.qd, dtype=float)).copy()
        if q.ndim != 1 or q.shape != qd.shape or q.size < 1:
            raise ContractViolation(
                f"q and qd must be 1-D vectors of equal length, got {q.shape} and {qd.shape}"
            )
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ContractViolation("state entries must be finite")
        q.flags.writeable = False
        qd.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    @property
    def n(self) -> int:
        return self.q.size

    @classmethod
    def at_rest(cls, q) -> "State":
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return cls(q, np.zeros_like(q))


class MechanicalModel(abc.ABC):
    """Uniform dynamics interface.

    Subclasses provide the raw potential, the triple ``(M, c, grad V)`` and
    the backbone map ``h(q, s)``.  The base class handles the potential
    normalization, the first-order right-hand side and a generic
    finite-difference stiffness matrix.

    Attributes
    ----------
    n_dofs : int
        Number of generalized coordinates.
    length : float
        Backbone rest length ``L`` in metres; ``s`` ranges over ``[0, L]``.
    """

    n_dofs: int
    length: float

    # -- model-specific hooks ---------------------------------------------
    @abc.abstractmethod
    def _raw_potential(self, q: np.ndarray) -> float:
        """Potential energy up to an additive constant."""

    @abc.abstractmethod
    def _terms(self, q: np.ndarray, qd: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(M(q), c(q, qd), grad V(q))``."""

    @abc.abstractmethod
    def backbone(self, q: np.ndarray, s) -> np.ndarray:
        """Backbone points for configuration(s) ``q``.

        ``q`` has shape ``(n,)`` or ``(B, n)``; ``s`` is a scalar or 1-D array.
        Returns shape ``(..., S, 3)`` (leading batch axis only if ``q`` is 2-D).
        """

    def spec(self) -> dict:
        """Normative description used for fingerprinting."""
        return {"class": type(self).__name__}

    @cached_property
    def fingerprint(self) -> str:
        import hashlib
        import json

        blob = json.dumps(self.spec(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- evaluated quantities ---------------------------------------------
    def _check(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_dofs,):
            raise ContractViolation(f"expected a vector of length {self.n_dofs}, got shape {q.shape}")
        return q

    def mass_matrix(self, q) -> np.ndarray:
        q = self._check(q)
        return self._terms(q, np.zeros_like(q))[0]

    def potential_gradient(self, q) -> np.ndarray:
        q = self._check(q)
        return self._terms(q, np.zeros_like(q))[2]

    def coriolis(self, q, qd) -> np.ndarray:
        q, qd = self._check(q), self._check(qd)
        return self._terms(q, qd)[1]

    def stiffness_matrix(self, q) -> np.ndarray:
        """Hessian of ``V`` by central differences of ``grad V``, symmetrized."""
        q = self._check(q)
        n = q.size
        K = np.empty((n, n))
        for i in range(n):
            h = 1e-5 * max(1.0, abs(q[i]))
            qp, qm = q.copy(), q.copy()
            qp[i] += h
            qm[i] -= h
            K[:, i] = (self.potential_gradient(qp) - self.potential_gradient(qm)) / (2 * h)
        return 0.5 * (K + K.T)

    @cached_property
    def q_eq(self) -> np.ndarray:
        """Stable equilibrium reached from the zero configuration."""
        return find_equilibrium(self, np.zeros(self.n_dofs))

    @cached_property
    def _potential_offset(self) -> float:
        return self._raw_potential(self.q_eq)

    def potential(self, q) -> float:
        q = self._check(q)
        return self._raw_potential(q) - self._potential_offset

    # -- first-order form ---------------------------------------------------
    def _accel(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        M, c, g = self._terms(q, qd)
        return _solve_mass(M, -(c + g))

    def rhs(self, t, y):
        n = self.n_dofs
        return np.concatenate([y[n:], self._accel(y[:n], y[n:])])

    def rhs_batch(self, Y: np.ndarray) -> np.ndarray:
        """First-order right-hand side for a batch of states, shape ``(B, 2n)``."""
        n = self.n_dofs
        out = np.empty_like(Y)
        out[:, :n] = Y[:, n:]
        for b in range(Y.shape[0]):
            out[b, n:] = self._accel(Y[b, :n], Y[b, n:])
        return out

    def __repr__(self):
        return f"{type(self).__name__}(n_dofs={self.n_dofs}, length={self.length})"


def _solve_mass(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cf = sla.cho_factor(M, lower=True, check_finite=False)
        return sla.cho_solve(cf, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        warnings.warn("mass matrix not positive definite; falling back to LU", RuntimeWarning)
        if not np.all(np.isfinite(M)) or np.linalg.cond(M) > MAX_CONDITION:
            raise SingularMassError("mass matrix is singular or ill-conditioned") from None
        lu, ipiv, jpiv, info = sla.lapack.dgetc2(M)
        x, scale = sla.lapack.dgesc2(lu, np.array(rhs, dtype=float), ipiv, jpiv)
        return x / scale


def _as_state(model: MechanicalModel, state: State) -> State:
    if state.n != model.n_dofs:
        raise ContractViolation(f"state has {state.n} DoFs, model has {model.n_dofs}")
    return state


def energy(model: MechanicalModel, state: State) -> float:
    """Total energy ``0.5 qd^T M(q) qd + V(q)``, zero at ``(q_eq, 0)``."""
    state = _as_state(model, state)
    M = model.mass_matrix(state.q)
    return 0.5 * state.qd @ M @ state.qd + model.potential(state.q)


def accelerations(model: MechanicalModel, state: State) -> np.ndarray:
    """Solve ``M(q) qdd = -(c(q, qd) + grad V(q))`` for ``qdd``."""
    state = _as_state(model, state)
    M, c, g = model._terms(state.q, state.qd)
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > MAX_CONDITION:
        raise SingularMassError(f"mass matrix condition number exceeds {MAX_CONDITION:g}")
    return _solve_mass(M, -(c + g))


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled solution of the equations of motion."""

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    energy_samples: np.ndarray

    @property
    def states(self) -> list[State]:
        return [State(a, b) for a, b in zip(self.q, self.qd)]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def relative_energy_drift(self) -> float:
        E0 = self.energy_samples[0]
        return float(np.max(np.abs(self.energy_samples - E0)) / max(abs(E0), 1e-12))


def _propagate(model, Y0, t_out, rtol, atol):
    """States at times ``t_out`` for a batch ``Y0`` of shape ``(B, 2n)``.

    Returns an array of shape ``(len(t_out), B, 2n)``.  Models exposing a
    compiled integrator use it; the rest go through scipy's DOP853.
    """
    from . import _kernels

    Y0 = np.ascontiguousarray(Y0, dtype=float)
    t_out = np.asarray(t_out, dtype=float)
    compiled = getattr(model, "_compiled_solve", None)
    if compiled is not None:
        out, status = compiled(Y0, t_out, rtol, atol)
        if status == _kernels.OK:
            return out
        if status == _kernels.TOO_SMALL_STEP:
            raise StiffnessError("required step size fell below floating-point spacing")
        if status == _kernels.NON_FINITE:
            raise DivergenceError("integration produced non-finite states")
        # SINGULAR_MASS: redo on the generic path, which warns and pivots

    shape = Y0.shape

    def fun(t, y):
        dy = model.rhs_batch(y.reshape(shape)).ravel()
        if not np.all(np.isfinite(dy)):
            raise DivergenceError(f"non-finite state derivative at t={t:.6g}")
        return dy

    sol = solve_ivp(fun, (0.0, t_out[-1]), Y0.ravel(), method="DOP853", t_eval=t_out, rtol=rtol, atol=atol)
    if sol.status != 0:
        if "step size" in sol.message:
            raise StiffnessError(sol.message)
        raise DivergenceError(sol.message)
    if not np.all(np.isfinite(sol.y)):
        raise DivergenceError("integration produced non-finite states")
    return sol.y.T.reshape((t_out.size,) + shape)


def integrate(
    model: MechanicalModel,
    initial: State,
    duration: float,
    *,
    samples: int = DEFAULT_SAMPLES,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> Trajectory:
    """Integrate from ``initial`` over ``[0, duration]``.

    Uses the 8th-order embedded Runge-Kutta pair DOP853 with adaptive steps.
    Samples lie on a uniform grid of ``samples`` points including both
    endpoints; the compiled path lands steps exactly on the grid, the
    generic path uses the method's 7th-order dense output.
    """
    initial = _as_state(model, initial)
    if not duration > 0:
        raise ContractViolation("duration must be positive")
    if samples < 2:
        raise ContractViolation("need at least two samples")
    n = model.n_dofs
    times = np.linspace(0.0, duration, samples)
    Y = _propagate(model, np.concatenate([initial.q, initial.qd])[None, :], times, rtol, atol)[:, 0]
    q, qd = Y[:, :n].copy(), Y[:, n:].copy()
    E = np.array([energy(model, State(a, b)) for a, b in zip(q, qd)])
    return Trajectory(times, q, qd, E)


def flow(
    model: MechanicalModel,
    Y0: np.ndarray,
    duration: float,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> np.ndarray:
    """End states after ``duration`` for a batch of initial states ``(B, 2n)``.

    The batch is integrated as one system, so all members share a single
    step-size sequence; finite differences between members are therefore
    free of step-selection noise.
    """
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    if not duration > 0:
        raise ContractViolation("duration must be positive")
    return _propagate(model, Y0, [duration], rtol, atol)[-1]


def find_equilibrium(
    model: MechanicalModel, guess, *, tol: float = 1e-10, max_iter: int = 50
) -> np.ndarray:
    """Damped Newton iteration on ``grad V(q) = 0`` from ``guess``.

    Raises
    ------
    ConvergenceError
        ``||grad V||_inf`` did not drop below ``tol`` within ``max_iter`` steps.
    SaddlePointError
        The stationary point found has an indefinite Hessian.
    """
    q = np.array(guess, dtype=float)
    g = model.potential_gradient(q)
    res = np.max(np.abs(g))
    for _ in range(max_iter):
        if res < tol:
            break
        K = model.stiffness_matrix(q)
        step = np.linalg.lstsq(K, -g, rcond=None)[0]
        lam = 1.0
        while True:
            q_try = q + lam * step
            g_try = model.potential_gradient(q_try)
            res_try = np.max(np.abs(g_try))
            if res_try < res or lam < 1e-6:
                break
            lam *= 0.5
        q, g, res = q_try, g_try, res_try
    else:
        if res >= tol:
            raise ConvergenceError(f"equilibrium search stalled at ||grad V|| = {res:.3e}")
    K = model.stiffness_matrix(q)
    if np.linalg.eigvalsh(K)[0] <= 0:
        raise SaddlePointError("stationary point is not a strict minimum of V")
    return q


@dataclass(frozen=True)
class LinearModeSet:
    """Linear modes at a stable equilibrium.

    ``eigvecs[:, i]`` is the M-orthonormal mode shape for ``omegas[i]``,
    sorted by ascending frequency and signed so its first non-negligible
    entry is positive.
    """

    q_eq: np.ndarray
    K: np.ndarray
    M: np.ndarray
    eigvecs: np.ndarray
    omegas: np.ndarray = field(repr=True)

    @property
    def periods(self) -> np.ndarray:
        return 2 * np.pi / self.omegas

    def mode(self, index: int) -> tuple[np.ndarray, float]:
        """``(c_i, omega_i)`` for a 1-based mode index."""
        if not 1 <= index <= self.omegas.size:
            raise ContractViolation(f"mode index {index} exceeds DoFs ({self.omegas.size})")
        return self.eigvecs[:, index - 1], float(self.omegas[index - 1])


def generalized_eigh(K: np.ndarray, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``K c = lam M c`` by Cholesky reduction ``M = L L^T``.

    Returns ascending eigenvalues and M-orthonormal eigenvectors (columns).
    """
    L = np.linalg.cholesky(M)
    A = sla.solve_triangular(L, K, lower=True)
    A = sla.solve_triangular(L, A.T, lower=True)
    lam, V = np.linalg.eigh(0.5 * (A + A.T))
    C = sla.solve_triangular(L.T, V, lower=False)
    return lam, C


def _orient(C: np.ndarray) -> np.ndarray:
    C = C.copy()
    for i in range(C.shape[1]):
        col = C[:, i]
        lead = np.flatnonzero(np.abs(col) > 1e-8 * np.max(np.abs(col)))[0]
        if col[lead] < 0:
            C[:, i] = -col
    return C


def linearize(model: MechanicalModel, q_eq=None, *, eq_tol: float = 1e-8) -> LinearModeSet:
    """Linear modes of ``M(q_eq) ddq + K(q_eq) dq = 0``."""
    q_eq = model.q_eq if q_eq is None else np.asarray(q_eq, dtype=float)
    grad = model.potential_gradient(q_eq)
    if np.max(np.abs(grad)) > eq_tol:
        raise ContractViolation(f"q_eq is not an equilibrium (||grad V|| = {np.max(np.abs(grad)):.3e})")
    K = model.stiffness_matrix(q_eq)
    M = model.mass_matrix(q_eq)
    lam, C = generalized_eigh(K, M)
    if lam[0] <= 0:
        raise UnstableEquilibriumError(f"smallest stiffness eigenvalue {lam[0]:.3e} is not positive")
    return LinearModeSet(q_eq.copy(), K, M, _orient(C), np.sqrt(lam))
