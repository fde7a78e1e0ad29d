"""Acceptance suite for the arm study.

Each test prints one ``PASS``/``FAIL`` line for its criterion.  The study
energy ceiling defaults to 1 J; set ``NMODES_ACCEPT_EMAX=0.5`` for a
shorter run.
"""

import os
import time
import zlib

import numpy as np
import pytest
from scipy import signal

from conftest import G0, LINK_LENGTH, LINK_MASS, single_link
from nmodes import archive
from nmodes.continuation import (
    DEFAULT_DE,
    DEFAULT_FIRST_FRACTION,
    _residual_tol,
    compute_generator,
    mode_trajectory,
    shooting_residual,
)
from nmodes.dynamics import integrate
from nmodes.metrics import ModalBranch, compare, discrete_frechet, min_msc_coherence, shared_energies
from nmodes.models import reference_arm
from oracles import arc_mass, arc_potential, frechet_bruteforce, random_state_with_energy, turning_point_period

E_MAX = float(os.environ.get("NMODES_ACCEPT_EMAX", "1.0"))
PCC = [f"pcc{n}" for n in range(1, 6)]
MODELS = PCC + ["rigid10"]


@pytest.fixture
def verdict(request):
    """Print one line per criterion, whatever the outcome of the asserts."""
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    lines = []

    def emit(number, ok, detail):
        lines.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    yield emit
    for line in lines:
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)


@pytest.fixture(scope="module")
def study(models):
    """Mode 1..min(n, 3) manifolds of every arm model, with timing."""
    start = time.perf_counter()
    branches = {}
    for name in MODELS:
        m = models[name]
        for mode in range(1, min(m.n_dofs, 3) + 1):
            manifold = compute_generator(m, mode, DEFAULT_DE, E_MAX)
            branches[name, mode] = ModalBranch(m, manifold, name)
    return branches, time.perf_counter() - start


def _truncations(branches):
    return {k: b.manifold.diagnostic for k, b in branches.items() if b.manifold.truncated}


# ---------------------------------------------------------------------------
# 1. energy conservation
# ---------------------------------------------------------------------------
def test_criterion_01_energy_conservation(models, verdict):
    start = time.perf_counter()
    worst = {}
    for name in MODELS:
        m = models[name]
        rng = np.random.default_rng(zlib.crc32(f"acceptance-{name}".encode()))
        drift = 0.0
        for _ in range(20):
            state = random_state_with_energy(m, rng.uniform(0.01, 1.0), rng)
            drift = max(drift, integrate(m, state, 5.0).relative_energy_drift())
        worst[name] = drift
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    ok = verdict(1, top <= 1e-8 and elapsed < 60, f"max relative drift {top:.2e} (<= 1e-8), {elapsed:.1f} s (< 60 s)")
    assert ok, worst


# ---------------------------------------------------------------------------
# 2. linear limit
# ---------------------------------------------------------------------------
def test_criterion_02_linear_limit(models, linear_modes, study, verdict):
    branches, _ = study
    first = DEFAULT_DE * DEFAULT_FIRST_FRACTION
    worst_freq, worst_angle, failures = 0.0, 0.0, []
    for name in MODELS:
        m, lm = models[name], linear_modes[name]
        for mode in range(1, m.n_dofs + 1):
            if (name, mode) in branches:
                manifold = branches[name, mode].manifold
            else:
                manifold = compute_generator(m, mode, DEFAULT_DE, first, linear_modes=lm)
            p = manifold.points[0]
            c, omega = lm.mode(mode)
            freq = abs(p.omega / omega - 1)
            d = p.q0 - lm.q_eq
            angle = np.degrees(np.arccos(min(1.0, abs(d @ c) / (np.linalg.norm(d) * np.linalg.norm(c)))))
            worst_freq, worst_angle = max(worst_freq, freq), max(worst_angle, angle)
            if freq > 0.01 or angle > 5:
                failures.append((name, mode, freq, angle))
    ok = verdict(2, not failures, f"worst frequency error {100 * worst_freq:.3f}% (<= 1%), worst angle {worst_angle:.3f} deg (<= 5)")
    assert ok, failures


# ---------------------------------------------------------------------------
# 3. periodicity and invariance of archived points
# ---------------------------------------------------------------------------
def test_criterion_03_periodicity(study, tmp_path, verdict):
    branches, _ = study
    worst_r, worst_3t, failures, count = 0.0, 0.0, [], 0
    for (name, mode), branch in branches.items():
        path = tmp_path / f"{name}_m{mode}.json"
        archive.save_archive(path, branch.manifold, model_spec=branch.model.spec(), model_name=name)
        for p in archive.load_archive(path).points:
            count += 1
            tol = _residual_tol(p.q0)
            r = np.max(np.abs(shooting_residual(branch.model, p.q0, p.T)))
            tr = mode_trajectory(branch.model, p, 2, periods=3.0)
            err3 = max(np.max(np.abs(tr.q[-1] - p.q0)), np.max(np.abs(tr.qd[-1])))
            worst_r, worst_3t = max(worst_r, r / tol), max(worst_3t, err3 / tol)
            if r >= tol or err3 >= 1e3 * tol:
                failures.append((name, mode, p.E, r / tol, err3 / tol))
    ok = verdict(3, not failures, f"{count} points, worst |r|/tol {worst_r:.3f} (< 1), worst 3T error/tol {worst_3t:.1f} (< 1000)")
    assert ok, failures


# ---------------------------------------------------------------------------
# 4. 1-DoF oracle
# ---------------------------------------------------------------------------
def test_criterion_04_single_link_oracle(models, verdict):
    start = time.perf_counter()
    arm = reference_arm(1)
    L, EI, rhoA = arm.rest_length, arm.bending_stiffness, arm.line_density
    pcc1 = models["pcc1"]
    for th in (-1.3, 0.02, 0.7, 2.4):
        assert pcc1.mass_matrix([th])[0, 0] == pytest.approx(arc_mass(th, rhoA, L), rel=1e-10)
        assert pcc1.potential([th]) == pytest.approx(arc_potential(th, EI, rhoA, L), rel=1e-10)

    k = 2.0
    link = single_link(k)
    inertia = LINK_MASS * LINK_LENGTH**2 / 3
    cases = [
        ("pcc1", pcc1, lambda x: arc_mass(x, rhoA, L), lambda x: arc_potential(x, EI, rhoA, L)),
        ("link", link, lambda x: inertia,
         lambda x: 0.5 * k * x**2 + LINK_MASS * G0 * LINK_LENGTH / 2 * (1 - np.cos(x))),
    ]
    worst, count = 0.0, 0
    for _, m, mass, pot in cases:
        manifold = compute_generator(m, 1, DEFAULT_DE, E_MAX)
        assert not manifold.truncated
        for p in manifold.points:
            count += 1
            T = turning_point_period(mass, pot, p.E, bracket=3.5)
            worst = max(worst, abs(p.T / T - 1))
    elapsed = time.perf_counter() - start
    ok = verdict(4, worst <= 1e-6 and elapsed < 60, f"{count} energies, worst relative period error {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 60 s)")
    assert ok


# ---------------------------------------------------------------------------
# 5. discrete Frechet oracle
# ---------------------------------------------------------------------------
def test_criterion_05_frechet_oracle(verdict):
    rng = np.random.default_rng(5)
    mismatches, asym = 0, 0
    for _ in range(500):
        a = rng.normal(size=rng.integers(1, 9))
        b = rng.normal(size=rng.integers(1, 9))
        d = discrete_frechet(a, b)
        mismatches += d != frechet_bruteforce(a, b)
        asym += d != discrete_frechet(b, a)
        assert discrete_frechet(a, a) == 0.0
    ok = verdict(5, mismatches == 0 and asym == 0, f"500 pairs: {mismatches} oracle mismatches, {asym} asymmetric")
    assert ok


# ---------------------------------------------------------------------------
# 6. coherence sanity
# ---------------------------------------------------------------------------
def test_criterion_06_coherence(verdict):
    fs = 4096 / 8.0
    t = np.arange(4096) / fs
    rng = np.random.default_rng(6)
    a = np.sin(2 * np.pi * 1.3 * t) + 0.4 * np.sin(2 * np.pi * 5.1 * t + 0.3) + 0.05 * rng.normal(size=t.size)
    same = min_msc_coherence(a, a, fs)
    affine = min_msc_coherence(a, 3 * a + 2, fs)
    x, y = np.sin(2 * np.pi * t), np.sin(2 * np.pi * np.sqrt(2) * t)
    incommensurate = min_msc_coherence(x, y, fs)
    # reference estimator over the same bins
    f, C = signal.coherence(x, y, fs, window="hann", nperseg=1024, noverlap=512, detrend="constant")
    _, Pxx = signal.welch(x, fs, window="hann", nperseg=1024, noverlap=512, detrend="constant")
    _, Pyy = signal.welch(y, fs, window="hann", nperseg=1024, noverlap=512, detrend="constant")
    power = Pxx * Pyy
    keep = (f > 0) & (power > 1e-12 * power.max())
    reference = C[keep].min()
    ok = same >= 1 - 1e-9 and affine >= 1 - 1e-9 and incommensurate <= 0.2 and abs(incommensurate - reference) < 1e-9
    verdict(6, ok, f"identical {same:.12f}, affine {affine:.12f}, incommensurate {incommensurate:.4f} (reference {reference:.4f}, <= 0.2)")
    assert ok


# ---------------------------------------------------------------------------
# 7-10. arm study
# ---------------------------------------------------------------------------
def test_criterion_07_tip_frechet_bound(study, verdict):
    branches, build_time = study
    start = time.perf_counter()
    worst, where, count = 0.0, None, 0
    for name in PCC:
        for mode in range(1, min(int(name[3:]), 3) + 1):
            report = compare(branches[name, mode], branches["rigid10", mode], integrals=False)
            f = report.f[:, 0, :]
            for e, E in enumerate(report.energies):
                count += 1
                for k in (0, 2):
                    if f[e, k] > worst:
                        worst, where = f[e, k], (name, mode, "xyz"[k], float(E))
    elapsed = build_time + time.perf_counter() - start
    cut = _truncations(branches)
    note = f"; truncated: {cut}" if cut else ""
    ok = verdict(7, worst <= 0.08 and elapsed < 1800,
                 f"{count} energy comparisons up to {E_MAX} J, max tip distance {worst:.4f} m at {where} (<= 0.08 m), "
                 f"{elapsed:.0f} s (< 1800 s){note}")
    assert ok


def test_criterion_08_convergence_ordering(study, verdict):
    branches, _ = study
    rigid = branches["rigid10", 1]
    F5 = compare(branches["pcc5", 1], rigid).F_E[0]
    F1 = compare(branches["pcc1", 1], rigid).F_E[0]
    ok = verdict(8, F5 < F1, f"F_E,x mode 1: PCC5 {F5:.5f} < PCC1 {F1:.5f} (m J m)")
    assert ok


def test_criterion_09_spectra(study, verdict):
    branches, _ = study

    def gaps(mode):
        A, B = branches["pcc5", mode], branches["rigid10", mode]
        E = shared_energies(A, B)
        wa = np.interp(E, A.manifold.energies, 2 * np.pi / A.manifold.periods)
        wb = np.interp(E, B.manifold.energies, 2 * np.pi / B.manifold.periods)
        return np.abs(wa / wb - 1)

    mode1 = gaps(1).max()
    mode3 = gaps(3).max()
    ok = verdict(9, mode1 <= 0.10 and mode3 > 0.10,
                 f"mode 1 max frequency gap {100 * mode1:.2f}% (<= 10%), mode 3 max gap {100 * mode3:.2f}% (> 10%)")
    assert ok


def test_criterion_10_coherence_ordering(study, verdict):
    branches, _ = study
    pairs = {mode: (branches["pcc5", mode], branches["rigid10", mode]) for mode in (1, 3)}
    # highest energy shared by both mode pairs, so the ordering compares equal energies
    E_star = min(shared_energies(*pairs[mode])[-1] for mode in (1, 3))
    g = {mode: compare(*pairs[mode], energies=[E_star], integrals=False).g[0, 0] for mode in (1, 3)}
    ok = g[1][0] > g[3][0] and g[1][2] > g[3][2]
    verdict(10, ok, f"E = {E_star:.4g} J: min-MSC mode 1 (x {g[1][0]:.2e}, z {g[1][2]:.2e}) > "
                    f"mode 3 (x {g[3][0]:.2e}, z {g[3][2]:.2e})")
    assert ok
