"""Task-space similarity of nonlinear modes across models.

Modes of models with different configuration spaces are compared through
the backbone position ``h(q(t), s)``.  Per energy and arc length the
one-period curves of each Cartesian component are compared with the
discrete Fréchet distance and the minimum magnitude-squared coherence;
both are integrated over arc length with a 10-point Gauss-Legendre rule
and over energy with the trapezoid rule.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.interpolate import CubicSpline

from .continuation import Eigenmanifold, ModeTrajectory, mode_trajectory, point_at_energy
from .dynamics import MechanicalModel
from .errors import ContractViolation, EnergyRangeError

COMPONENTS = ("x", "y", "z")
QUAD_NODES = 10
CURVE_SAMPLES = 512
COHERENCE_SAMPLES = 4096
TILE_PERIODS = 8
WELCH_SEGMENT = 1024
POWER_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# discrete Fréchet distance
# ---------------------------------------------------------------------------
@njit(cache=True)
def _frechet_dp(a, b):
    n, m = a.size, b.size
    row = np.empty(m)
    row[0] = abs(a[0] - b[0])
    for j in range(1, m):
        row[j] = max(row[j - 1], abs(a[0] - b[j]))
    for i in range(1, n):
        diag = row[0]
        row[0] = max(row[0], abs(a[i] - b[0]))
        for j in range(1, m):
            up = row[j]
            best = min(diag, up, row[j - 1])
            row[j] = max(best, abs(a[i] - b[j]))
            diag = up
    return row[m - 1]


def discrete_frechet(a, b) -> float:
    """Discrete Fréchet distance between two scalar sequences.

    Standard coupling dynamic program with ground metric ``|a_i - b_j|``,
    ``O(len(a) len(b))`` time and ``O(len(b))`` memory.
    """
    a = np.ascontiguousarray(a, dtype=float).ravel()
    b = np.ascontiguousarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractViolation("Fréchet distance needs non-empty sequences")
    return float(_frechet_dp(a, b))


# ---------------------------------------------------------------------------
# magnitude-squared coherence
# ---------------------------------------------------------------------------
def _hann(n: int) -> np.ndarray:
    # periodic window, the usual choice for spectral averaging
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _segments(x: np.ndarray, nperseg: int, step: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, nperseg)[::step]
    return view - view.mean(axis=1, keepdims=True)


def welch_spectra(a, b, rate: float, nperseg: int = WELCH_SEGMENT):
    """Averaged one-sided spectra ``(freqs, Paa, Pbb, Pab)``.

    Hann-windowed segments with 50% overlap, each segment mean-removed.
    Spectra share an arbitrary common scale, which cancels in coherence.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ContractViolation("coherence needs equal-length signals")
    step = nperseg // 2
    if a.size < nperseg + 3 * step:
        raise ContractViolation(f"need at least four Welch segments ({nperseg + 3 * step} samples), got {a.size}")
    w = _hann(nperseg)
    A = np.fft.rfft(_segments(a, nperseg, step) * w, axis=1)
    B = np.fft.rfft(_segments(b, nperseg, step) * w, axis=1)
    Paa = np.mean(np.abs(A) ** 2, axis=0)
    Pbb = np.mean(np.abs(B) ** 2, axis=0)
    Pab = np.mean(np.conj(A) * B, axis=0)
    return np.fft.rfftfreq(nperseg, 1 / rate), Paa, Pbb, Pab


def msc_minimum(a, b, rate: float, nperseg: int = WELCH_SEGMENT) -> tuple[float, bool]:
    """Minimum coherence over retained bins and a flag for silent signals.

    Bins are retained when ``Paa Pbb`` exceeds ``1e-12`` times its peak;
    the DC bin is always dropped.  With no retained bin the result is
    ``(1.0, True)``.
    """
    _, Paa, Pbb, Pab = welch_spectra(a, b, rate, nperseg)
    pooled = (Paa * Pbb)[1:]
    peak = pooled.max()
    keep = pooled > POWER_FLOOR * peak
    if peak <= 0 or not keep.any():
        return 1.0, True
    msc = np.abs(Pab[1:][keep]) ** 2 / pooled[keep]
    return float(np.clip(msc.min(), 0.0, 1.0)), False


def min_msc_coherence(a, b, rate: float, nperseg: int = WELCH_SEGMENT) -> float:
    """Minimum over frequency of the Welch magnitude-squared coherence."""
    return msc_minimum(a, b, rate, nperseg)[0]


# ---------------------------------------------------------------------------
# task-space projection
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TaskCurve:
    """One period of a backbone coordinate sampled uniformly in time."""

    component: str
    s: float
    E: float
    T: float
    values: np.ndarray

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ContractViolation(f"unknown component {self.component!r}")
        if self.values.size < 64 or not np.all(np.isfinite(self.values)):
            raise ContractViolation("task curve needs at least 64 finite samples")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.values.size)


class ModalBranch:
    """A model together with one of its eigenmanifolds.

    Mode trajectories are materialized on demand and cached per energy.
    """

    def __init__(self, model: MechanicalModel, manifold: Eigenmanifold, name: str = "", samples: int = CURVE_SAMPLES):
        if manifold.fingerprint and manifold.fingerprint != model.fingerprint:
            raise ContractViolation("manifold was computed for a different model")
        self.model = model
        self.manifold = manifold
        self.name = name
        self.samples = samples
        self._cache: dict[float, ModeTrajectory] = {}

    @property
    def length(self) -> float:
        return self.model.length

    @property
    def energy_range(self) -> tuple[float, float]:
        E = self.manifold.energies
        if E.size == 0:
            raise EnergyRangeError("manifold has no points")
        return float(E[0]), float(E[-1])

    def trajectory(self, E: float) -> ModeTrajectory:
        key = float(E)
        if key not in self._cache:
            point = point_at_energy(self.model, self.manifold, key)
            self._cache[key] = mode_trajectory(self.model, point, self.samples)
        return self._cache[key]

    def shapes(self, E: float, s) -> np.ndarray:
        """Backbone points over one period, shape ``(samples, len(s), 3)``."""
        return self.model.backbone(self.trajectory(E).q, np.atleast_1d(s))

    def curve(self, E: float, s: float, component: str) -> TaskCurve:
        k = COMPONENTS.index(component)
        traj = self.trajectory(E)
        return TaskCurve(component, float(s), float(E), traj.source.T, self.shapes(E, [s])[:, 0, k])


def _check_energy(A: ModalBranch, B: ModalBranch, E: float):
    for br in (A, B):
        lo, hi = br.energy_range
        if not (0 < E <= hi + 1e-9):
            raise EnergyRangeError(f"E = {E} J outside branch {br.name or br.model!r} (0, {hi}]")


def _check_s(A: ModalBranch, B: ModalBranch, s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or np.any(s > min(A.length, B.length) + 1e-12):
        raise ContractViolation("arc length outside the shared backbone range")
    return s


def _tile(values: np.ndarray, T: float, t: np.ndarray) -> np.ndarray:
    closed = values.copy()
    closed[-1] = closed[0]
    spline = CubicSpline(np.linspace(0.0, T, values.shape[0]), closed, axis=0, bc_type="periodic")
    return spline(np.mod(t, T))


def coherence_signals(A: ModalBranch, B: ModalBranch, E: float, s):
    """Equal-rate signals ``(a, b, rate)`` of shape ``(4096, len(s), 3)``.

    Each one-period curve is extended periodically over eight periods of the
    slower mode and resampled by a periodic cubic spline.
    """
    s = np.atleast_1d(s)
    TA, TB = A.trajectory(E).source.T, B.trajectory(E).source.T
    duration = TILE_PERIODS * max(TA, TB)
    t = np.arange(COHERENCE_SAMPLES) * (duration / COHERENCE_SAMPLES)
    a = _tile(A.shapes(E, s), TA, t)
    b = _tile(B.shapes(E, s), TB, t)
    return a, b, COHERENCE_SAMPLES / duration


def _local_metrics(A, B, E, s):
    """Fréchet and coherence tables ``(len(s), 3)`` plus silent-bin flags."""
    sa, sb = A.shapes(E, s), B.shapes(E, s)
    f = np.array([[discrete_frechet(sa[:, j, k], sb[:, j, k]) for k in range(3)] for j in range(len(s))])
    a, b, rate = coherence_signals(A, B, E, s)
    g = np.empty_like(f)
    silent = np.zeros(f.shape, dtype=bool)
    for j in range(len(s)):
        for k in range(3):
            g[j, k], silent[j, k] = msc_minimum(a[:, j, k], b[:, j, k], rate)
    return f, g, silent


def modal_frechet(A: ModalBranch, B: ModalBranch, E: float, s: float) -> np.ndarray:
    """Componentwise ``f(E, s)``, shape ``(3,)``."""
    _check_energy(A, B, E)
    s = _check_s(A, B, s)
    sa, sb = A.shapes(E, s), B.shapes(E, s)
    return np.array([discrete_frechet(sa[:, 0, k], sb[:, 0, k]) for k in range(3)])


def modal_coherence(A: ModalBranch, B: ModalBranch, E: float, s: float) -> np.ndarray:
    """Componentwise ``g(E, s)``, shape ``(3,)``."""
    _check_energy(A, B, E)
    s = _check_s(A, B, s)
    a, b, rate = coherence_signals(A, B, E, s)
    return np.array([msc_minimum(a[:, 0, k], b[:, 0, k], rate)[0] for k in range(3)])


def arc_quadrature(length: float, nodes: int = QUAD_NODES):
    """Gauss-Legendre nodes and weights on ``[0, length]``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * length * (x + 1), 0.5 * length * w


def modal_integral_frechet(A: ModalBranch, B: ModalBranch, E: float) -> np.ndarray:
    """``F(E) = int_0^L f(E, s) ds`` per component."""
    _check_energy(A, B, E)
    s, w = arc_quadrature(min(A.length, B.length))
    sa, sb = A.shapes(E, s), B.shapes(E, s)
    f = np.array([[discrete_frechet(sa[:, j, k], sb[:, j, k]) for k in range(3)] for j in range(s.size)])
    return w @ f


def modal_integral_coherence(A: ModalBranch, B: ModalBranch, E: float) -> np.ndarray:
    """``G(E) = int_0^L g(E, s) ds`` per component."""
    _check_energy(A, B, E)
    s, w = arc_quadrature(min(A.length, B.length))
    a, b, rate = coherence_signals(A, B, E, s)
    g = np.array([[msc_minimum(a[:, j, k], b[:, j, k], rate)[0] for k in range(3)] for j in range(s.size)])
    return w @ g


# ---------------------------------------------------------------------------
# energy sweeps
# ---------------------------------------------------------------------------
def shared_energies(A: ModalBranch, B: ModalBranch, tol: float = 1e-9) -> np.ndarray:
    """Energies at which both branches are compared.

    When both manifolds were traced with the same reference step ``dE``,
    these are the multiples of ``dE`` stored in both.  Otherwise (or when no
    multiple is shared) the union of both generator grids restricted to the
    common range is used.
    """
    loA, hiA = A.energy_range
    loB, hiB = B.energy_range
    lo, hi = max(loA, loB), min(hiA, hiB)
    if lo > hi + tol:
        raise EnergyRangeError("no energy overlap between the manifolds")
    EA, EB = A.manifold.energies, B.manifold.energies
    dE = A.manifold.settings.get("dE")
    if dE and dE == B.manifold.settings.get("dE"):
        on_grid = EA[np.abs(EA / dE - np.round(EA / dE)) * dE <= tol]
        common = on_grid[np.min(np.abs(on_grid[:, None] - EB[None, :]), axis=1, initial=np.inf) <= tol]
        if common.size:
            return common
    E = np.sort(np.concatenate([EA, EB]))
    E = E[(E >= lo - tol) & (E <= hi + tol)]
    keep = np.concatenate([[True], np.diff(E) > tol])
    return E[keep]


def trapezoid_from_equilibrium(E, values, at_equilibrium) -> np.ndarray:
    """Trapezoid rule over ``[0, E[-1]]`` with ``values`` prepended by the
    equilibrium value ``at_equilibrium``."""
    E = np.concatenate([[0.0], np.asarray(E, dtype=float)])
    Y = np.concatenate([np.atleast_2d(at_equilibrium), np.atleast_2d(np.asarray(values, dtype=float).T).T])
    return np.trapezoid(Y, E, axis=0)


@dataclass
class ComparisonReport:
    """Similarity tables of one mode between two models.

    Arrays are indexed ``[energy, s, component]`` for local metrics and
    ``[energy, component]`` for arc-length integrals.  ``F_E`` and ``G_E``
    integrate over ``[0, E_max]`` (equilibrium energy is zero); below the
    first shared energy ``F`` goes to zero and ``G`` is held constant.
    """

    model_a: str
    model_b: str
    mode: int
    energies: np.ndarray
    s_values: np.ndarray
    f: np.ndarray
    g: np.ndarray
    F: np.ndarray
    G: np.ndarray
    F_E: np.ndarray
    G_E: np.ndarray
    degenerate: np.ndarray
    metadata: dict = field(default_factory=dict)

    def rows(self):
        """Report rows ``(model_a, model_b, mode, component, energy_J, s_m, metric, value)``.

        Ordered by component, then energy ascending; energy-integrated
        totals follow with ``energy_J = "integral"``.
        """
        out = []
        for k, comp in enumerate(COMPONENTS):
            for e, E in enumerate(self.energies):
                for j, s in enumerate(self.s_values):
                    out.append((comp, E, s, "frechet", self.f[e, j, k]))
                    out.append((comp, E, s, "coherence", self.g[e, j, k]))
                out.append((comp, E, "integral", "frechet", self.F[e, k]))
                out.append((comp, E, "integral", "coherence", self.G[e, k]))
        for k, comp in enumerate(COMPONENTS):
            out.append((comp, "integral", "integral", "frechet", self.F_E[k]))
            out.append((comp, "integral", "integral", "coherence", self.G_E[k]))
        return [(self.model_a, self.model_b, self.mode) + r for r in out]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("NMODES_THREADS", "1")))
    except ValueError:
        return 1


def compare(
    A: ModalBranch,
    B: ModalBranch,
    s_values=None,
    *,
    energies=None,
    integrals: bool = True,
) -> ComparisonReport:
    """Evaluate ``f, g`` at ``s_values`` and ``F, G`` over the shared energies.

    ``s_values`` defaults to the tip ``[L]``.  With ``integrals=False`` the
    arc-length integrals (the expensive part) are skipped and left as NaN.
    """
    if A.manifold.mode_index != B.manifold.mode_index:
        raise ContractViolation("compare the same mode index on both models")
    L = min(A.length, B.length)
    s_values = _check_s(A, B, [L] if s_values is None else s_values)
    if energies is None:
        energies = shared_energies(A, B)
    energies = np.asarray(energies, dtype=float)
    for E in energies:
        _check_energy(A, B, E)
    nodes, weights = arc_quadrature(L)
    grid = np.concatenate([s_values, nodes]) if integrals else s_values
    ns = s_values.size

    def one(E):
        f, g, silent = _local_metrics(A, B, E, grid)
        return f, g, silent

    # trajectories are cached per branch, so fill the caches serially
    for E in energies:
        A.trajectory(E), B.trajectory(E)
    with ThreadPoolExecutor(_workers()) as pool:
        results = list(pool.map(one, energies))

    f = np.array([r[0][:ns] for r in results]).reshape(energies.size, ns, 3)
    g = np.array([r[1][:ns] for r in results]).reshape(energies.size, ns, 3)
    silent = np.array([r[2] for r in results]).reshape(energies.size, grid.size, 3)
    if integrals:
        F = np.array([weights @ r[0][ns:] for r in results]).reshape(energies.size, 3)
        G = np.array([weights @ r[1][ns:] for r in results]).reshape(energies.size, 3)
        F_E = trapezoid_from_equilibrium(energies, F, np.zeros(3))
        G_E = trapezoid_from_equilibrium(energies, G, G[0])
    else:
        F = G = np.full((energies.size, 3), np.nan)
        F_E = G_E = np.full(3, np.nan)
    degenerate = silent.all(axis=(0, 1))
    meta = {
        "quad_nodes": QUAD_NODES,
        "curve_samples": A.samples,
        "coherence_samples": COHERENCE_SAMPLES,
        "tile_periods": TILE_PERIODS,
        "welch_segment": WELCH_SEGMENT,
        "power_floor": POWER_FLOOR,
    }
    return ComparisonReport(
        A.name, B.name, A.manifold.mode_index, energies, s_values, f, g, F, G, F_E, G_E, degenerate, meta
    )


def energy_integrated(A: ModalBranch, B: ModalBranch):
    """``(F_E, G_E)`` per component over the shared energy grid."""
    report = compare(A, B)
    return report.F_E, report.G_E


def energy_frequency_table(manifold: Eigenmanifold) -> np.ndarray:
    """Rows ``(E, omega, f)`` with ``omega = 2 pi / T`` in rad/s and ``f`` in Hz."""
    E = manifold.energies
    T = manifold.periods
    return np.column_stack([E, 2 * np.pi / T, 1 / T])
