"""Acceptance criteria, one test each.

Every test prints a single ``CRITERION n: PASS|FAIL|SKIP ...`` line with the
measured figures.  Criterion 1 runs a 30000-atom sweep and criterion 2 runs
only when ``CQDSIM_REFERENCE`` names a reference data file.
"""
import dataclasses
import os

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from conftest import REFERENCE_ANGLES, random_units
from cqdsim.core import FRISCH_SEGRE as GEOM
from cqdsim.core import K39, MomentState
from cqdsim.dynamics import (
    AVAILABLE_BACKENDS,
    ReducedSystem,
    integrate_atom,
    integrate_full,
    integrate_linear_field,
    rhs_reduced,
    total_spin,
)
from cqdsim.field import adiabaticity, field_on_path, null_point, quadrupole_field, total_field
from cqdsim.harness import SweepConfig, default_currents, default_workers, format_results, load_reference, run_sweep
from cqdsim.sampling import RandomStream, post_sg1_angles, post_sg1_cdf

pytestmark = pytest.mark.acceptance

US = 1e-6


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


# 1 ------------------------------------------------------------------------


def test_criterion_1_oracle_agreement(report):
    cfg = SweepConfig(currents=default_currents(15), atoms_per_current=2000, seed=1)
    result = run_sweep(cfg, workers=default_workers())
    w_num = np.array([r.W_num for r in result.rows])
    w_ana = np.array([r.W_ana for r in result.rows])
    diff = w_num - w_ana
    rms, worst = float(np.sqrt(np.mean(diff**2))), float(np.max(np.abs(diff)))
    rows = " ".join(f"{r.current:.4g}:{r.W_num:.3f}/{r.W_ana:.3f}" for r in result.rows)
    ok = not result.failed and rms <= 0.05 and worst <= 0.12
    assert report(1, ok, f"rms={rms:.4f} (<=0.05) max={worst:.4f} (<=0.12) [I:W_num/W_ana {rows}]")


# 2 ------------------------------------------------------------------------


def test_criterion_2_full_scale_regression(report, capsys):
    path = os.environ.get("CQDSIM_REFERENCE")
    if not path:
        with capsys.disabled():
            print("\nCRITERION 2: SKIP no reference data (set CQDSIM_REFERENCE to a current,fraction file)")
        pytest.skip("reference data not supplied")
    reference = load_reference(path)
    cfg = SweepConfig(currents=tuple(sorted(reference.currents)), atoms_per_current=15000, seed=1)
    result = run_sweep(cfg, workers=default_workers(), reference=reference)
    r2n, r2a = result.r_squared_num, result.r_squared_ana
    ok = not result.failed and r2n >= 0.90 and r2a >= 0.93
    assert report(2, ok, f"R2_num={r2n:.4f} (>=0.90) R2_ana={r2a:.4f} (>=0.93)")


# 3 ------------------------------------------------------------------------


def test_criterion_3_larmor_precession(report):
    B, t_end = 42e-6, 10 * US
    system = ReducedSystem(K39.gamma_e, K39.gamma_n, 0.0, 0.0, np.pi / 3, (0.0, 0.0, B), (0.0, 0.0, 0.0))
    t = np.linspace(0.0, t_end, 2001)
    phase = -K39.gamma_e * B * t
    exact = np.stack([np.cos(phase), np.sin(phase), np.zeros_like(t)], axis=1)
    parts, ok = [], True
    for backend in AVAILABLE_BACKENDS:
        _, y, _ = integrate_linear_field(np.array([1.0, 0.0, 0.0, 0.0]), system, (0.0, t_end), t_eval=t, backend=backend)
        phi = np.unwrap(np.arctan2(y[:, 1], y[:, 0]))
        rel_phase = np.max(np.abs(phi - phase)) / phase[-1]
        rel_vec = np.max(np.linalg.norm(y[:, :3] - exact, axis=1))
        ok &= rel_phase < 1e-8 and rel_vec < 1e-8
        parts.append(f"{backend}: phase={rel_phase:.2e} vector={rel_vec:.2e}")
    assert report(3, ok, "; ".join(parts) + " (<1e-8)")


# 4 ------------------------------------------------------------------------


def test_criterion_4_conservation(report):
    rng = np.random.default_rng(4)
    t = np.linspace(0.0, 1 * US, 201)
    worst = 0.0
    for e, n in zip(random_units(rng, 5), random_units(rng, 5)):
        _, me, mn = integrate_full(MomentState(e, n), np.zeros(3), (0.0, 1 * US), t)
        s0 = total_spin(e, n)
        worst = max(worst, float(np.max(np.linalg.norm(total_spin(me, mn) - s0, axis=1)) / np.linalg.norm(s0)))
    # the reduced system carries no theta_n state; its rate is identically 0
    rates = [rhs_reduced((a, b, c, d), s * US, 0.1, GEOM)[2] for a, b, c, d, s in rng.uniform(0.1, 3.0, (200, 5))]
    theta_n_exact = all(r == 0.0 for r in rates)
    tr = integrate_atom(MomentState.from_angles(*REFERENCE_ANGLES), 0.1, GEOM)
    theta_n_exact &= tr.theta_n0 == MomentState.from_angles(*REFERENCE_ANGLES).nuclear_angles[0]
    ok = worst < 1e-9 and theta_n_exact
    assert report(4, ok, f"spin drift={worst:.2e} (<1e-9) theta_n exact={theta_n_exact}")


# 5 ------------------------------------------------------------------------


def test_criterion_5_sampling_moments(report):
    z = RandomStream(5, 0).uniform((2, 1_000_000))
    polar, _ = post_sg1_angles(z[0], z[1])
    m = float(np.mean(polar))
    c = float(np.mean(np.cos(polar)))
    ks = float(stats.kstest(polar, post_sg1_cdf).statistic)
    ok = abs(m - 5 * np.pi / 8) <= 3e-3 and abs(c + 1 / 3) <= 3e-3 and ks < 2e-3
    assert report(5, ok, f"<theta>-5pi/8={m - 5 * np.pi / 8:+.2e} <cos>+1/3={c + 1 / 3:+.2e} (|.|<=3e-3) KS={ks:.2e} (<2e-3)")


# 6 ------------------------------------------------------------------------


def _taylor_slope(I_w, direction):
    np_ = null_point(I_w, GEOM)
    rho = np.geomspace(0.1 * US, 10 * US, 9)
    y = np_.y_NP + rho * direction[0]
    z = -GEOM.z_a + rho * direction[1]
    rem = np.linalg.norm(quadrupole_field(y, z, I_w, GEOM) - total_field(y, z, I_w, GEOM), axis=-1)
    return np.polyfit(np.log(rho), np.log(rem), 1)[0]


def _k_finite_difference(t, I_w):
    def angle(tt):
        B = field_on_path(tt, I_w, GEOM)
        return np.arctan2(B[..., 2], B[..., 1])

    h = np.minimum(1e-4 * np.maximum(np.abs(t - null_point(I_w, GEOM).t_NP), 1e-9), 1e-9)
    rate = (-angle(t + 2 * h) + 8 * angle(t + h) - 8 * angle(t - h) + angle(t - 2 * h)) / (12 * h)
    return abs(K39.gamma_e) * np.linalg.norm(field_on_path(t, I_w, GEOM), axis=-1) / np.abs(rate)


def test_criterion_6_field_checks(report):
    currents = np.geomspace(0.01, 0.5, 25)
    eps = np.finfo(float).eps
    null_max = max(
        float(np.max(np.abs(total_field(null_point(I, GEOM).y_NP, -GEOM.z_a, I, GEOM)))) / GEOM.B_r for I in currents
    )
    slopes = [_taylor_slope(I, (np.cos(a), np.sin(a))) for I in (0.01, 0.1, 0.5) for a in (0.3, 1.2, 2.5, 4.0)]
    t = np.linspace(-GEOM.half_transit, GEOM.half_transit, 1000) * 0.999
    k_rel = max(
        float(np.max(np.abs(adiabaticity(t, I, GEOM) / _k_finite_difference(t, I) - 1.0))) for I in currents
    )
    slope_dev = max(abs(s - 2.0) for s in slopes)
    ok = null_max <= 4 * eps and slope_dev <= 0.1 and k_rel < 1e-6
    assert report(
        6,
        ok,
        f"|B(NP)|/B_r={null_max:.1e} (<=4 eps) slope 2{slope_dev:+.3f} max dev (<=0.1) k rel={k_rel:.1e} (<1e-6)",
    )


# 7 ------------------------------------------------------------------------

FASTEST_WINDOW = 0.5 * US  # sliding window for the largest theta_e swing
DECAY_BIN = 1.0 * US  # bins after the null point for the amplitude sequence


def theta_e_features(I_w):
    """Location of the fastest theta_e swing and post-null-point amplitudes.

    The fastest swing is the ``FASTEST_WINDOW`` span with the largest
    ``max - min`` of theta_e; its centre is reported relative to t_NP.  The
    amplitudes are ``max - min`` over consecutive ``DECAY_BIN`` bins starting
    at t_NP.
    """
    tr = integrate_atom(MomentState.from_angles(*REFERENCE_ANGLES), I_w, GEOM)
    dt = tr.times - null_point(I_w, GEOM).t_NP
    step = float(np.median(np.diff(tr.times)))
    k = int(round(FASTEST_WINDOW / step)) + 1
    win = sliding_window_view(tr.theta_e, k)
    swing = win.max(axis=1) - win.min(axis=1)
    centre = sliding_window_view(dt, k).mean(axis=1)[np.argmax(swing)]
    edges = np.arange(0.0, dt[-1] - DECAY_BIN * (1 - 1e-9), DECAY_BIN)
    amps = []
    for lo in edges:
        sel = (dt >= lo) & (dt < lo + DECAY_BIN)
        amps.append(float(np.ptp(tr.theta_e[sel])))
    return float(centre), np.array(amps)


def test_criterion_7_reference_trajectories(report):
    parts, ok = [], True
    for I_w in (0.05, 0.1, 0.2, 0.3):
        centre, amps = theta_e_features(I_w)
        near = abs(centre) <= 0.5 * US
        decays = bool(np.all(np.diff(amps) <= 0.0))
        ok &= near and decays
        parts.append(f"I={I_w}: fastest@{centre / US:+.3f}us near={near} decaying={decays}")
    assert report(7, ok, "; ".join(parts) + " (fastest within +-0.5 us of t_NP)")


# 8 ------------------------------------------------------------------------


def test_criterion_8_worker_reproducibility(report):
    cfg = SweepConfig(currents=tuple(np.geomspace(0.05, 0.5, 5)), atoms_per_current=64, seed=8)
    texts = {w: format_results(run_sweep(cfg, workers=w)) for w in (1, 4, 8)}
    ok = texts[1] == texts[4] == texts[8]
    rows = [line for line in texts[1].splitlines() if not line.startswith("#")]
    assert report(8, ok, f"workers 1/4/8 byte-identical={ok} ({len(texts[1])} bytes, {len(rows) - 1} rows)")


def test_criterion_8_differs_across_seeds():
    # guards against a vacuous pass: the output must depend on the seed
    cfg = SweepConfig(currents=(0.05, 0.1, 0.2), atoms_per_current=64, seed=8)

    def rows(c):
        return [line for line in format_results(run_sweep(c)).splitlines() if not line.startswith("#")]

    assert rows(cfg) != rows(dataclasses.replace(cfg, seed=9))
