"""Time evolution: free closed form, Stone-formula correction, decay ratios."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvschro import shellref
from mvschro.measures import make_shell_measure
from mvschro.propagator import (
    SourceFunction,
    _radial_gaussian_resolvent,
    default_lam_grid,
    dispersive_ratio,
    evolve_ac,
    export_evolution_csv,
    free_evolve,
    triangle_cutoff,
)

LIMIT_RATIO = (4.0 * np.pi) ** -1.5


def axis_probes(radii):
    pts = np.zeros((len(radii), 3))
    pts[:, 0] = radii
    return pts


# ---------------------------------------------------------------------------
# source functions
# ---------------------------------------------------------------------------


def test_gaussian_factory_unit_mass():
    f = SourceFunction.gaussian(1.3)
    assert f.l1_norm == pytest.approx(1.0, rel=1e-12)
    g = SourceFunction.gaussian(0.8, amplitude=2.5)
    assert g.l1_norm == pytest.approx(2.5 * (2 * np.pi * 0.64) ** 1.5, rel=1e-12)


def test_source_validation():
    with pytest.raises(ValueError):
        SourceFunction.gaussian(0.0)
    with pytest.raises(ValueError):
        SourceFunction(centers=((0, 0, 0),), sigmas=(1.0, 2.0), amplitudes=(1.0,))
    with pytest.raises(ValueError):
        SourceFunction(centers=(), sigmas=(), amplitudes=())


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=-3.0, max_value=3.0, allow_nan=False))
def test_scaled_l1_homogeneous(c):
    f = SourceFunction.gaussian(1.1, amplitude=0.7)
    assert f.scaled(c).l1_norm == pytest.approx(abs(c) * f.l1_norm, abs=1e-14)


def test_values_peak_at_center():
    f = SourceFunction.gaussian(0.9, amplitude=1.4, center=(1.0, 0.0, 0.0))
    vals = f.values(np.array([[1.0, 0.0, 0.0], [1.0, 0.9, 0.0]]))
    assert vals[0] == pytest.approx(1.4, rel=1e-12)
    assert vals[1] == pytest.approx(1.4 * math.exp(-0.5), rel=1e-12)


def test_triangle_cutoff_shape():
    x = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
    assert np.allclose(triangle_cutoff(x), [0, 0, 0.5, 1.0, 0.5, 0, 0])


# ---------------------------------------------------------------------------
# radial resolvent of a Gaussian: dual route against closed forms
# ---------------------------------------------------------------------------


def test_radial_resolvent_matches_faddeeva_form():
    sigma, amp = 1.3, 0.7
    radii = np.array([1e-4, 0.4, 1.0, 3.0])
    worst = 0.0
    for lam in (0.3, 1.0, 2.0, 6.4):
        got = _radial_gaussian_resolvent(lam, radii, sigma, amp)
        ref = np.array(
            [shellref.gaussian_resolvent_closed_form(lam, r, sigma, amp) for r in radii]
        )
        worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
    assert worst < 1e-7


def test_radial_resolvent_newton_limit():
    # lam = 0 reduces to the Coulomb integral: A sqrt(pi/2) sigma^3 erf(r/(sigma sqrt2))/r
    sigma, amp = 1.3, 0.7
    radii = np.array([0.3, 1.0, 2.7])
    got = _radial_gaussian_resolvent(0.0, radii, sigma, amp)
    ref = amp * math.sqrt(math.pi / 2) * sigma**3 * np.array(
        [math.erf(r / (sigma * math.sqrt(2))) / r for r in radii]
    )
    assert np.allclose(got.real, ref, rtol=1e-8)
    assert np.max(np.abs(got.imag)) < 1e-10
    center = _radial_gaussian_resolvent(0.0, np.array([0.0]), sigma, amp)
    assert center[0].real == pytest.approx(amp * sigma**2, rel=1e-8)


def test_radial_resolvent_continuous_at_origin():
    got0 = _radial_gaussian_resolvent(2.0, np.array([0.0]), 1.0, 1.0)
    goteps = _radial_gaussian_resolvent(2.0, np.array([1e-6]), 1.0, 1.0)
    assert abs(got0[0] - goteps[0]) < 1e-6 * abs(got0[0])


# ---------------------------------------------------------------------------
# free evolution
# ---------------------------------------------------------------------------


def test_free_ratio_exact_value():
    f = SourceFunction.gaussian(1.0)
    res = free_evolve(f, [10.0, 1.0, 2.0, 40.0, 110.0], axis_probes([0.0, 0.5]))
    exact = LIMIT_RATIO * (400.0 / 401.0) ** 0.75
    assert res.ratios[0] == pytest.approx(exact, rel=1e-12)
    assert abs(res.ratios[0] / LIMIT_RATIO - 1.0) < 0.005


def test_free_sup_ratio_near_limit():
    f = SourceFunction.gaussian(1.0)
    res = free_evolve(f, np.geomspace(4.0, 40.0, 6), axis_probes([0.0, 0.3]))
    sup, slope = dispersive_ratio(res)
    assert abs(sup / LIMIT_RATIO - 1.0) < 0.005
    assert 0.0 < slope < 0.01  # residual width transient only


def test_two_gaussians_stay_under_single_bound():
    f = SourceFunction(
        centers=((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)),
        sigmas=(1.0, 1.0),
        amplitudes=(0.5, 0.5),
    )
    probes = axis_probes(np.linspace(-1.0, 2.0, 13))
    res = free_evolve(f, np.geomspace(1.0, 50.0, 8), probes)
    assert np.all(res.ratios <= LIMIT_RATIO * (1 + 1e-12))


def test_free_rejects_t_zero():
    with pytest.raises(ValueError):
        free_evolve(SourceFunction.gaussian(1.0), [0.0, 1.0], axis_probes([0.0]))


# ---------------------------------------------------------------------------
# perturbed evolution
# ---------------------------------------------------------------------------


def test_zero_coupling_reduces_to_free():
    mu = make_shell_measure(1.0, 0.0, 60)
    f = SourceFunction.gaussian(1.5)
    ts = [1.0, 5.0]
    probes = axis_probes([0.0, 0.8, 2.0])
    res = evolve_ac(mu, f, ts, probes, cutoff=32.0)
    ref = free_evolve(f, ts, probes)
    assert np.max(np.abs(res.values - ref.values)) < 1e-13


def test_matches_partial_wave_oracle():
    # centered Gaussian against the shell scatters in the s-wave only, so the
    # one-channel reference resolves the same field
    mu = make_shell_measure(1.0, -0.5, 200)
    f = SourceFunction.gaussian(1.5)
    ts = np.array([1.0, 2.0, 5.0, 10.0, 20.0])
    radii = np.array([0.0, 0.4, 0.8, 1.5, 2.5])
    res = evolve_ac(mu, f, ts, axis_probes(radii), cutoff=64.0)
    n_lam = int(res.notes["lam_points"]) - 1
    orc = shellref.shell_evolve(
        shellref.ShellSpec(1.0, -0.5),
        1.5,
        f.amplitudes[0],
        ts,
        radii,
        cutoff_scale=64.0,
        n_lam=n_lam,
        lam_top=float(default_lam_grid(f, 20.0, 2.0, cutoff=64.0)[-1]),
    )
    devs = [
        np.max(np.abs(res.values[i] - orc["u"][i])) / np.max(np.abs(orc["u"][i]))
        for i in range(ts.size)
    ]
    assert max(devs) < 0.015


def test_linear_in_data():
    mu = make_shell_measure(1.0, -0.5, 80)
    f1 = SourceFunction.gaussian(1.5)
    f2 = SourceFunction.gaussian(1.2, amplitude=0.4, center=(0.3, 0.0, 0.0))
    both = SourceFunction(
        centers=f1.centers + f2.centers,
        sigmas=f1.sigmas + f2.sigmas,
        amplitudes=f1.amplitudes + f2.amplitudes,
    )
    ts = [2.0]
    probes = axis_probes([0.0, 1.0, 2.0])
    grid = default_lam_grid(both, 2.0, 4.0, cutoff=32.0)
    u1 = evolve_ac(mu, f1, ts, probes, cutoff=32.0, lam_grid=grid, richardson=False)
    u2 = evolve_ac(mu, f2, ts, probes, cutoff=32.0, lam_grid=grid, richardson=False)
    u12 = evolve_ac(mu, both, ts, probes, cutoff=32.0, lam_grid=grid, richardson=False)
    scale = np.max(np.abs(u12.values))
    assert np.max(np.abs(u12.values - u1.values - u2.values)) < 1e-12 * scale


def test_time_reversal_conjugates():
    mu = make_shell_measure(1.0, -0.5, 80)
    f = SourceFunction.gaussian(1.5)
    probes = axis_probes([0.0, 0.9])
    res = evolve_ac(mu, f, [-3.0, 3.0], probes, cutoff=32.0)
    assert np.max(np.abs(res.values[0] - np.conj(res.values[1]))) < 1e-13


def test_cutoff_doubling_is_stable():
    # contract: once the tail is contractive, doubling L moves the field < 1%
    mu = make_shell_measure(1.0, -0.5, 100)
    f = SourceFunction.gaussian(1.5)
    ts = [1.0, 5.0]
    probes = axis_probes([0.0, 0.8, 1.8])
    u32 = evolve_ac(mu, f, ts, probes, cutoff=32.0)
    u64 = evolve_ac(mu, f, ts, probes, cutoff=64.0)
    drift = np.max(np.abs(u32.values - u64.values)) / np.max(np.abs(u64.values))
    assert drift < 0.01


def test_born_deviation_scales_linearly():
    f = SourceFunction.gaussian(1.5)
    ts = [2.0, 5.0]
    probes = axis_probes([0.0, 0.8, 1.6])
    free = free_evolve(f, ts, probes)
    devs = {}
    for g in (0.04, 0.02):
        mu = make_shell_measure(1.0, g, 80)
        res = evolve_ac(mu, f, ts, probes, cutoff=32.0)
        devs[g] = np.max(np.abs(res.values - free.values))
    assert devs[0.04] / devs[0.02] == pytest.approx(2.0, rel=0.1)


def test_probe_superset_never_lowers_sup():
    mu = make_shell_measure(1.0, -0.5, 80)
    f = SourceFunction.gaussian(1.5)
    small = axis_probes([0.0, 1.5])
    big = axis_probes([0.0, 0.5, 1.0, 1.5, 2.5])
    a = evolve_ac(mu, f, [2.0], small, cutoff=32.0)
    b = evolve_ac(mu, f, [2.0], big, cutoff=32.0)
    assert b.sup_norms[0] >= a.sup_norms[0] - 1e-15


def test_local_refinement_never_lowers_sup():
    mu = make_shell_measure(1.0, -0.5, 80)
    f = SourceFunction.gaussian(1.5)
    probes = axis_probes([0.0, 0.7, 1.4])
    plain = evolve_ac(mu, f, [2.0], probes, cutoff=32.0)
    refined = evolve_ac(mu, f, [2.0], probes, cutoff=32.0, refine_rounds=2)
    assert refined.sup_norms[0] >= plain.sup_norms[0] - 1e-15


def test_resonant_coupling_needs_force():
    mu = make_shell_measure(1.0, -1.0, 150)
    f = SourceFunction.gaussian(1.5)
    with pytest.raises(ValueError, match="force=True"):
        evolve_ac(mu, f, [1.0, 5.0], axis_probes([0.0]), cutoff=32.0)


def test_rejects_t_zero():
    mu = make_shell_measure(1.0, -0.5, 50)
    with pytest.raises(ValueError, match="t = 0"):
        evolve_ac(mu, SourceFunction.gaussian(1.0), [0.0], axis_probes([0.0]))


def test_rejects_coarse_grid():
    mu = make_shell_measure(1.0, -0.5, 50)
    f = SourceFunction.gaussian(1.0)
    with pytest.raises(ValueError, match="phase budget"):
        evolve_ac(mu, f, [20.0], axis_probes([0.0]), lam_grid=np.linspace(0, 6.4, 12))


# ---------------------------------------------------------------------------
# grids, ratios, export
# ---------------------------------------------------------------------------


def test_default_grid_frozen_shape():
    f = SourceFunction.gaussian(1.5)
    grid = default_lam_grid(f, 20.0, 2.0, cutoff=64.0)
    assert grid.size == 940
    assert grid[0] == 0.0
    assert grid[-1] == pytest.approx(math.sqrt(2 * math.log(1e9)) / 1.5, rel=1e-12)


def test_default_grid_cutoff_clamps():
    f = SourceFunction.gaussian(1.5)
    grid = default_lam_grid(f, 5.0, 2.0, cutoff=2.0)
    assert grid[-1] == pytest.approx(2.0, rel=1e-12)


def test_dispersive_ratio_validations():
    f = SourceFunction.gaussian(1.0)
    probes = axis_probes([0.0])
    with pytest.raises(ValueError, match="5 time samples"):
        dispersive_ratio(free_evolve(f, [1.0, 3.0, 6.0, 12.0], probes))
    with pytest.raises(ValueError, match="decade"):
        dispersive_ratio(free_evolve(f, [1.0, 2.0, 3.0, 4.0, 5.0], probes))
    with pytest.raises(ValueError, match="distinct"):
        dispersive_ratio(free_evolve(f, [1.0, 1.0, 3.0, 6.0, 12.0], probes))


def test_csv_export_format(tmp_path):
    f = SourceFunction.gaussian(1.0)
    res = free_evolve(f, [1.0, 10.0], axis_probes([0.0, 1.0]))
    out = tmp_path / "evo.csv"
    export_evolution_csv(res, str(out))
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,probe_index,re_u,im_u,sup_norm,ratio"
    assert len(lines) == 1 + 2 * 2
    first = lines[1].split(",")
    assert len(first) == 6
    assert float(first[2]) == pytest.approx(res.values[0, 0].real, rel=1e-10)
