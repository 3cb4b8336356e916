"""Cell problems against analytic effective constants.

The layered diffusion 2 + sin(2 pi y1) has a closed-form effective matrix:
harmonic mean sqrt(3) across the layers, arithmetic mean 2 along them.  The
identity diffusion with W = sin(2 pi y1) gives chi_w = -sin(2 pi y1)/(4 pi^2)
and effective potential -1/(8 pi^2); the sine-mix potential doubles it.
"""

import numpy as np
import pytest

from homlab.cell import (
    cross_flux_identity_defect,
    divergence_residual,
    solve_cell,
    solve_chi,
    solve_chi_w,
)
from homlab.coefficients import A_PRESETS, W_PRESETS, CoefficientModel, make_preset
from homlab.grids import PeriodicGrid


def desymmetrized_model():
    """Layered A with a phase-shifted potential, so the cross-flux identity
    has genuinely nonzero sides (the builtin presets pair an even A with an
    odd W and both sides vanish by parity)."""
    base = make_preset("layered")
    return CoefficientModel(
        a_eval=base.a_eval,
        w_eval=lambda y1, y2: np.sin(2 * np.pi * np.asarray(y1, dtype=float) + 0.7),
        f_eval=base.f_eval,
        kappa=base.kappa)


def test_identity_correctors_vanish():
    cs = solve_cell(make_preset("identity"), 32)
    for j in range(2):
        assert np.max(np.abs(cs.chi[j].values)) < 1e-10
    assert np.max(np.abs(cs.a_hat - np.eye(2))) < 1e-12


def test_layered_effective_matrix_analytic():
    cs = solve_cell(make_preset("layered"), 64)
    assert cs.a_hat[0, 0] == pytest.approx(np.sqrt(3.0), abs=2e-3)
    assert cs.a_hat[1, 1] == pytest.approx(2.0, abs=1e-9)
    assert abs(cs.a_hat[0, 1]) < 1e-12
    assert abs(cs.a_hat[1, 0]) < 1e-12


def test_smooth_iso_effective_matrix_is_isotropic_and_bounded():
    cs = solve_cell(make_preset("smooth-iso"), 64)
    assert cs.a_hat[0, 0] == pytest.approx(cs.a_hat[1, 1], rel=1e-10)
    assert abs(cs.a_hat[0, 1]) < 1e-12
    # Voigt/Reuss: between harmonic and arithmetic means of 2 + sin*sin
    assert 1.5 < cs.a_hat[0, 0] < 2.0


def test_correctors_have_zero_mean():
    cs = solve_cell(make_preset("smooth-iso", "sine1"), 32)
    for name, val in cs.mean_abs.items():
        assert val < 1e-12, name


def test_effective_potential_identity_sine1():
    cs = solve_cell(make_preset("identity", "sine1"), 64)
    # frozen numeric value at n=64 plus the analytic target
    assert cs.m_w_chi_w == pytest.approx(-0.012654980330495329, rel=1e-9)
    assert cs.m_w_chi_w == pytest.approx(-1.0 / (8 * np.pi ** 2), abs=1.1e-5)
    assert cs.m_w_chi_w < 0.0


def test_effective_potential_identity_sine_mix():
    cs = solve_cell(make_preset("identity", "sine-mix"), 64)
    assert cs.m_w_chi_w == pytest.approx(-1.0 / (4 * np.pi ** 2), abs=3e-5)


@pytest.mark.parametrize("a", A_PRESETS)
@pytest.mark.parametrize("w", W_PRESETS)
def test_energy_identity_residual_tiny_everywhere(a, w):
    cs = solve_cell(make_preset(a, w), 32, with_aux=False)
    assert cs.energy_identity_residual < 1e-12


def test_cross_flux_identity_desymmetrized_decay():
    model = desymmetrized_model()
    defects = {}
    for n in (64, 128):
        grid = PeriodicGrid(n)
        chi = solve_chi(model, grid, tol=1e-12)
        chi_w = solve_chi_w(model, grid, tol=1e-12)
        defects[n] = np.max(cross_flux_identity_defect(model, grid, chi, chi_w))
    assert defects[64] < 3e-9          # measured 2.362e-9
    assert defects[64] / defects[128] > 8.0  # measured ratio 16 (fourth order)


def test_flux_correctors_are_mean_zero():
    cs = solve_cell(make_preset("smooth-iso", "sine1"), 32, with_aux=False)
    assert np.max(np.abs(cs.flux.mean())) < 1e-12


def test_divergence_residual_decays_with_grid():
    model = make_preset("smooth-iso", "sine1")
    res = {}
    for n in (32, 64):
        cs = solve_cell(model, n, with_aux=False)
        res[n] = np.max(divergence_residual(cs.flux))
    # halving h should at least halve the residual; measured ratio 4.0
    assert res[32] / res[64] >= 1.7


def test_aux_potentials_compatibility():
    cs = solve_cell(make_preset("smooth-iso", "sine1"), 32)
    assert cs.aux is not None
    assert np.max(np.abs(cs.aux.compat_defects)) < 1e-12
    for gf in (*cs.aux.psi1, cs.aux.psi2, cs.aux.psi3):
        assert abs(gf.values.mean()) < 1e-10
