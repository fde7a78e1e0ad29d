"""Eigenmanifold generators by energy-stepped shooting continuation.

A generator point is a zero-velocity configuration ``q0`` whose free motion
returns to ``(q0, 0)`` after period ``T``.  Points are traced from the linear
mode outward in energy: tangent prediction, then a Newton corrector on the
periodicity residual augmented with an energy constraint.  When the
corrector stalls the energy step is halved; after a success it is doubled
back toward the reference step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .dynamics import (
    DEFAULT_SAMPLES,
    LinearModeSet,
    MechanicalModel,
    _propagate,
    linearize,
)
from .errors import (
    BranchPointError,
    ContractViolation,
    ConvergenceError,
    EnergyRangeError,
    IntegrationError,
)

log = logging.getLogger(__name__)

DEFAULT_NMAX = 15
DEFAULT_DE = 0.05
DEFAULT_EMAX = 1.0
ENERGY_MATCH_TOL = 1e-9
# the residual tolerance is close to the integration error at the general
# default tolerances, so shooting integrates tighter
SHOOT_RTOL = 1e-12
SHOOT_ATOL = 1e-12
# first increment as a fraction of the reference step
DEFAULT_FIRST_FRACTION = 1 / 32
# Newton stops at this fraction of the shooting tolerance so that points
# re-verify under an independent (unbatched) integration
ACCEPT_MARGIN = 0.1
# Newton gives up early when the residual has not halved over this many updates
STALL_WINDOW = 4
STALL_RATIO = 0.5


@dataclass(frozen=True)
class GeneratorPoint:
    """Zero-velocity seed ``(q0, T, E)`` of one nonlinear mode."""

    q0: np.ndarray
    T: float
    E: float
    newton_iters: int = 0
    residual_norm: float = 0.0

    @property
    def omega(self) -> float:
        return 2 * np.pi / self.T


@dataclass
class Eigenmanifold:
    """Energy-ordered generator points of one mode.

    ``truncated`` is set when continuation stopped before ``E_max`` (energy
    step underflow or a branch point); ``diagnostic`` says why.
    """

    mode_index: int
    omega: float
    eigvec: np.ndarray
    points: list[GeneratorPoint]
    fingerprint: str = ""
    truncated: bool = False
    diagnostic: str = ""
    settings: dict = field(default_factory=dict)

    @property
    def energies(self) -> np.ndarray:
        return np.array([p.E for p in self.points])

    @property
    def periods(self) -> np.ndarray:
        return np.array([p.T for p in self.points])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ModeTrajectory:
    """One period of the nonlinear mode seeded by ``source``."""

    source: GeneratorPoint
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray

    @property
    def sample_count(self) -> int:
        return self.times.size


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------
def _residual_tol(q0) -> float:
    return 1e-8 * (1 + np.max(np.abs(q0)))


def _energy_tol(E_target) -> float:
    return 1e-10 * max(1.0, abs(E_target))


def shooting_residual(model: MechanicalModel, q0, T: float, *, rtol=SHOOT_RTOL, atol=SHOOT_ATOL) -> np.ndarray:
    """Periodicity residual ``(q0 - q(T); -qd(T))`` from rest at ``q0``."""
    q0 = model._check(q0)
    if not T > 0:
        raise ContractViolation("period must be positive")
    n = model.n_dofs
    y = _propagate(model, np.concatenate([q0, np.zeros(n)])[None, :], [T], rtol, atol)[-1, 0]
    return np.concatenate([q0 - y[:n], -y[n:]])


def shooting_jacobian(model: MechanicalModel, q0, T: float, *, rtol=SHOOT_RTOL, atol=SHOOT_ATOL):
    """Residual and its Jacobian ``(r, dr/dq0, dr/dT)`` at ``(q0, T)``.

    ``dr/dq0`` comes from forward differences with step ``1e-6 (1 + |q0_i|)``.
    The nominal and perturbed trajectories are integrated as one batch so
    they share a step-size sequence; ``dr/dT = -(qd(T); qdd(T))`` is exact.
    """
    q0 = model._check(q0)
    n = model.n_dofs
    steps = 1e-6 * (1 + np.abs(q0))
    Y0 = np.zeros((n + 1, 2 * n))
    Y0[:, :n] = q0
    Y0[1:, :n] += np.diag(steps)
    YT = _propagate(model, Y0, [T], rtol, atol)[-1]
    R = np.concatenate([Y0[:, :n] - YT[:, :n], -YT[:, n:]], axis=1)
    r = R[0]
    Jq = ((R[1:] - r) / steps[:, None]).T
    yT = YT[0]
    JT = -model.rhs(T, yT)
    return r, Jq, JT


# ---------------------------------------------------------------------------
# continuation steps
# ---------------------------------------------------------------------------
def bootstrap_first_point(model: MechanicalModel, linear_modes: LinearModeSet, mode_index: int, dE: float):
    """Seed on the linear eigenspace whose linearized energy equals ``dE``.

    Returns ``(q0, T)`` with ``q0 = q_eq + alpha c_i``,
    ``alpha = sqrt(2 dE / c_i^T K c_i)`` and ``T = 2 pi / omega_i``.
    """
    if not dE > 0:
        raise ContractViolation("energy step must be positive")
    c, omega = linear_modes.mode(mode_index)
    alpha = np.sqrt(2 * dE / (c @ linear_modes.K @ c))
    return linear_modes.q_eq + alpha * c, 2 * np.pi / omega


def _lstsq_qr(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(A)
    return sla.solve_triangular(R, Q.T @ b)


def _correct(model, q0, T, E_target, n_max, rtol, atol, history=None):
    q = np.array(q0, dtype=float)
    T = float(T)
    n = model.n_dofs
    first = None
    seen = []
    for it in range(n_max + 1):
        r, Jq, JT = shooting_jacobian(model, q, T, rtol=rtol, atol=atol)
        V = model.potential(q)
        res = np.max(np.abs(r))
        seen.append(res)
        if history is not None:
            history.append(float(res))
        log.debug("newton %d: |r|=%.3e dE=%.3e T=%.6g", it, res, V - E_target, T)
        if res < ACCEPT_MARGIN * _residual_tol(q) and abs(V - E_target) < _energy_tol(E_target):
            point = GeneratorPoint(q.copy(), T, float(V), it, float(res))
            return point, np.column_stack([Jq, JT])
        if it == n_max:
            break
        if first is None:
            first = res
        elif res > 1e3 * max(first, 1e-6):
            raise ConvergenceError(f"Newton diverged (|r| = {res:.3e})")
        elif it >= STALL_WINDOW and res > STALL_RATIO * seen[it - STALL_WINDOW]:
            raise ConvergenceError(f"Newton stagnated (|r| = {res:.3e})")
        A = np.zeros((2 * n + 1, n + 1))
        A[: 2 * n, :n] = Jq
        A[: 2 * n, n] = JT
        A[2 * n, :n] = model.potential_gradient(q)
        b = -np.concatenate([r, [V - E_target]])
        dx = _lstsq_qr(A, b)
        q = q + dx[:n]
        T = T + dx[n]
        if not (T > 0 and np.all(np.isfinite(q))):
            raise ConvergenceError("Newton iterate left the admissible region")
    raise ConvergenceError(f"no convergence in {n_max} Newton iterations (|r| = {res:.3e})")


def correct(
    model: MechanicalModel,
    q0_pred,
    T_pred: float,
    E_target: float,
    *,
    n_max: int = DEFAULT_NMAX,
    rtol: float = SHOOT_RTOL,
    atol: float = SHOOT_ATOL,
    history: list | None = None,
) -> GeneratorPoint:
    """Newton-correct a prediction onto the generator at energy ``E_target``.

    Solves ``(r(q0, T); V(q0) - E_target) = 0`` in the least-squares sense
    (QR of the ``(2n+1) x (n+1)`` Jacobian) until
    ``|r|_inf < 1e-8 (1 + |q0|_inf)`` and ``|V - E_target| < 1e-10 max(1, E_target)``.

    Raises
    ------
    ConvergenceError
        Not converged within ``n_max`` Newton updates, diverging or stagnating.

    ``history``, when given, receives the residual norm of every iterate.
    """
    return _correct(model, q0_pred, T_pred, E_target, n_max, rtol, atol, history)[0]


def _tangent(jac: np.ndarray, rank_tol: float) -> np.ndarray:
    _, s, Vh = np.linalg.svd(jac)
    if s[-2] < rank_tol * s[0]:
        raise BranchPointError(
            f"continuation Jacobian has a second near-null direction (sigma ratio {s[-2] / s[0]:.2e})"
        )
    return Vh[-1]


def predict(
    model: MechanicalModel,
    point: GeneratorPoint,
    dE: float,
    *,
    jacobian: np.ndarray | None = None,
    rank_tol: float = 1e-7,
    rtol: float = SHOOT_RTOL,
    atol: float = SHOOT_ATOL,
):
    """Step along the branch tangent so that the energy rises by about ``dE``.

    The tangent is the null direction of ``[dr/dq0, dr/dT]`` at ``point``
    (right singular vector of the smallest singular value), oriented so that
    ``grad V(q0) . t_q > 0``.  Returns ``(q0_pred, T_pred)``.
    """
    if jacobian is None:
        _, Jq, JT = shooting_jacobian(model, point.q0, point.T, rtol=rtol, atol=atol)
        jacobian = np.column_stack([Jq, JT])
    t = _tangent(jacobian, rank_tol)
    n = model.n_dofs
    slope = model.potential_gradient(point.q0) @ t[:n]
    if slope < 0:
        t, slope = -t, -slope
    if slope < 1e-14:
        raise BranchPointError("branch tangent is orthogonal to the energy gradient")
    alpha = dE / slope
    return point.q0 + alpha * t[:n], point.T + alpha * t[n]


def compute_generator(
    model: MechanicalModel,
    mode_index: int,
    dE: float = DEFAULT_DE,
    E_max: float = DEFAULT_EMAX,
    n_max: int = DEFAULT_NMAX,
    *,
    linear_modes: LinearModeSet | None = None,
    first_step: float | None = None,
    min_halvings: int = 10,
    rtol: float = SHOOT_RTOL,
    atol: float = SHOOT_ATOL,
) -> Eigenmanifold:
    """Trace the generator of mode ``mode_index`` (1-based) up to ``E_max``.

    The first point sits ``first_step`` (default ``dE / 32``) above the
    equilibrium energy, which is zero by construction.  Steps then double
    back toward ``dE`` without crossing multiples of ``dE``, so branches of
    different models share the grid ``dE, 2 dE, ...`` unless halving was
    needed there.
    """
    if not dE > 0:
        raise ContractViolation("reference energy step must be positive")
    if not E_max > 0:
        raise ContractViolation("E_max must exceed the equilibrium energy")
    lm = linear_modes if linear_modes is not None else linearize(model)
    c, omega = lm.mode(mode_index)
    if first_step is None:
        first_step = dE * DEFAULT_FIRST_FRACTION
    if not 0 < first_step <= dE:
        raise ContractViolation("first step must lie in (0, dE]")
    settings = {"dE": dE, "first_step": first_step, "E_max": E_max, "n_max": n_max, "predictor": "tangent", "rtol": rtol, "atol": atol}
    manifold = Eigenmanifold(mode_index, omega, c.copy(), [], model.fingerprint, settings=settings)
    floor = dE / 2**min_halvings

    nominal = first_step
    jac = None
    E_cmd = 0.0
    while True:
        if nominal < floor:
            manifold.truncated = True
            manifold.diagnostic = f"energy step fell below {floor:.3e} J at E = {E_cmd:.6g} J"
            break
        target = _next_target(E_cmd, nominal, dE)
        step = target - E_cmd
        try:
            if not manifold.points:
                q_pred, T_pred = bootstrap_first_point(model, lm, mode_index, step)
            else:
                q_pred, T_pred = predict(model, manifold.points[-1], step, jacobian=jac)
            point, jac_new = _correct(model, q_pred, T_pred, target, n_max, rtol, atol)
            if abs(point.T - T_pred) > 0.2 * T_pred:
                raise ConvergenceError("corrector jumped to a different period")
        except (ConvergenceError, IntegrationError) as exc:
            log.info("mode %d: step %.4g J from %.4g J failed (%s); halving", mode_index, step, E_cmd, exc)
            nominal = step / 2
            continue
        except BranchPointError as exc:
            manifold.truncated = True
            manifold.diagnostic = f"branch point near E = {E_cmd:.6g} J: {exc}"
            break
        manifold.points.append(point)
        jac = jac_new
        E_cmd = target
        log.info("mode %d: E = %.6g J, T = %.8g s, %d Newton steps", mode_index, point.E, point.T, point.newton_iters)
        if E_cmd >= E_max * (1 - 1e-12):
            break
        nominal = min(2 * nominal, dE)
    return manifold


def _next_target(E_cmd: float, step: float, dE: float) -> float:
    """``E_cmd + step``, clipped to the next multiple of ``dE``.

    Grid multiples are returned as exact products ``k * dE`` so that
    branches of different models share bitwise-equal energies.
    """
    k = np.floor(E_cmd / dE + 1e-9) + 1
    grid = float(k * dE)
    target = E_cmd + step
    return grid if target >= grid - 1e-9 * dE else target


# ---------------------------------------------------------------------------
# materialization
# ---------------------------------------------------------------------------
def mode_trajectory(
    model: MechanicalModel,
    point: GeneratorPoint,
    sample_count: int = DEFAULT_SAMPLES,
    *,
    periods: float = 1.0,
    rtol: float = SHOOT_RTOL,
    atol: float = SHOOT_ATOL,
) -> ModeTrajectory:
    """Integrate from ``(q0, 0)`` over ``periods * T`` on a uniform grid."""
    if sample_count < 2:
        raise ContractViolation("need at least two samples")
    n = model.n_dofs
    times = np.linspace(0.0, periods * point.T, sample_count)
    Y = _propagate(model, np.concatenate([point.q0, np.zeros(n)])[None, :], times, rtol, atol)[:, 0]
    return ModeTrajectory(point, times, Y[:, :n].copy(), Y[:, n:].copy())


def point_at_energy(
    model: MechanicalModel, manifold: Eigenmanifold, E: float, *, n_max: int = DEFAULT_NMAX
) -> GeneratorPoint:
    """Generator point at energy ``E``.

    Returns a stored point when one matches within ``1e-9`` J; otherwise
    interpolates ``(q0, T)`` linearly in energy between the bracketing
    points (or from the equilibrium below the first point) and re-corrects.
    """
    Es = manifold.energies
    if Es.size == 0:
        raise EnergyRangeError("manifold has no points")
    k = int(np.argmin(np.abs(Es - E)))
    if abs(Es[k] - E) <= ENERGY_MATCH_TOL:
        return manifold.points[k]
    if E > Es[-1] or E <= 0:
        raise EnergyRangeError(f"E = {E} J outside the branch (0, {Es[-1]}]")
    j = int(np.searchsorted(Es, E))
    hi = manifold.points[j]
    if j == 0:
        lo_q, lo_T, lo_E = model.q_eq, 2 * np.pi / manifold.omega, 0.0
    else:
        lo = manifold.points[j - 1]
        lo_q, lo_T, lo_E = lo.q0, lo.T, lo.E
    w = (E - lo_E) / (hi.E - lo_E)
    q_seed = (1 - w) * lo_q + w * hi.q0
    T_seed = (1 - w) * lo_T + w * hi.T
    return correct(model, q_seed, T_seed, E, n_max=n_max)


def mode_states(model: MechanicalModel, point: GeneratorPoint, fractions, *, rtol=SHOOT_RTOL, atol=SHOOT_ATOL):
    """Configurations at ``fractions`` of the period, shape ``(len(fractions), n)``."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.ndim != 1 or np.any(fractions < 0) or np.any(fractions > 1):
        raise ContractViolation("time fractions must lie in [0, 1]")
    n = model.n_dofs
    grid, inverse = np.unique(fractions * point.T, return_inverse=True)
    if grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
        inverse = inverse + 1
    if grid[-1] == 0:
        return np.tile(point.q0, (fractions.size, 1))
    Y = _propagate(model, np.concatenate([point.q0, np.zeros(n)])[None, :], grid, rtol, atol)[:, 0]
    return Y[inverse, :n]
