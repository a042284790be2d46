import dataclasses
import math

import numpy as np
import pytest

from cavsim.errors import InvalidParameterError, ModelInvalidError
from cavsim.presets import GHZ, MHZ, lambda_set_r999, lambda_set_r9999
from cavsim.spin import (
    DriveSpec,
    LambdaAtomSpec,
    SpinModelParams,
    collective_modes,
    effective_hamiltonian_terms,
    effective_schrodinger_evolve,
    frame_detunings,
    model_deviation,
    spin_evolve,
    spin_hamiltonian,
    spin_parameters,
    validity_ratios,
)


def _params(ls, **kw):
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    return spin_parameters(ls.modes.N, ls.g_a, ls.g_b, ls.drives, det, ls.modes, **kw)


def test_two_mode_basis_is_symmetric_and_antisymmetric():
    m = collective_modes(2, 1.0e9, 3.0)
    h = 1 / math.sqrt(2)
    np.testing.assert_allclose(m.s, [[h, h], [h, -h]], atol=1e-15)
    np.testing.assert_allclose(m.omega_k, [1.0e9 - 3.0, 1.0e9 + 3.0], rtol=0, atol=1e-6)


@pytest.mark.parametrize("N", [1, 3, 5, 8])
def test_mode_basis_orthogonal_and_diagonalises_chain(N):
    m = collective_modes(N, 0.0, 1.7)
    np.testing.assert_allclose(m.s.T @ m.s, np.eye(N), atol=1e-13)
    hop = -1.7 * (np.eye(N, k=1) + np.eye(N, k=-1))
    np.testing.assert_allclose(m.s.T @ hop @ m.s, np.diag(m.omega_k), atol=1e-13)
    v = np.arange(N, dtype=float)
    np.testing.assert_allclose(m.to_local(m.to_collective(v)), v, atol=1e-13)


def test_mode_basis_rejects_empty_chain():
    with pytest.raises(InvalidParameterError):
        collective_modes(0, 1.0, 1.0)


@pytest.mark.parametrize("factory", [lambda_set_r999, lambda_set_r9999])
def test_frame_detunings_recover_preset_values(factory):
    ls = factory()
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    assert det.delta == pytest.approx(10.0 * MHZ, rel=1e-9)
    # optical-frequency differences carry ~1 rad/s of rounding
    assert det.Delta_a == pytest.approx(5.000 * GHZ, abs=2.0)
    assert det.Delta_b == pytest.approx(11.825 * GHZ, abs=2.0)
    # the symmetric frame equalises the two Raman detunings for every mode
    np.testing.assert_allclose(det.delta_k_a - det.Delta_b, det.delta_k_b - det.Delta_a, rtol=1e-12)
    np.testing.assert_allclose(det.delta_k_a - det.delta_a, [ls.modes.J, -ls.modes.J], rtol=1e-6)


def test_frame_detuning_zero_when_lasers_split_by_ground_splitting():
    atom = LambdaAtomSpec(omega_e=2.4e15, omega_b=4.3e10, gamma=1.9e7)
    drives = DriveSpec(1e8, 1e8, nu_a=2.4e15 - 3e10, nu_b=2.4e15 - 3e10 - 2 * 4.3e10)
    det = frame_detunings(atom, drives, collective_modes(2, 2.4e15 - 5e10, 1e8))
    assert det.delta == 0.0


def test_no_drive_leaves_bare_field_and_no_couplings():
    ls = lambda_set_r999()
    drives = dataclasses.replace(ls.drives, Omega_a=0.0, Omega_b=0.0)
    det = frame_detunings(ls.atom, drives, ls.modes)
    sp = spin_parameters(2, ls.g_a, ls.g_b, drives, det, ls.modes)
    np.testing.assert_allclose(sp.B_sites, det.delta / 2, rtol=1e-15)
    assert np.all(sp.J == 0) and np.all(sp.K == 0)
    assert sp.validity_max == 0.0


def test_closed_form_matches_mode_sum():
    for factory in (lambda_set_r999, lambda_set_r9999):
        gen = _params(factory())
        cf = _params(factory(), closed_form_N2=True)
        np.testing.assert_allclose(cf.B_sites, gen.B_sites, rtol=1e-12)
        np.testing.assert_allclose(cf.J, gen.J, rtol=1e-10, atol=1e-12 * abs(gen.J).max())
        np.testing.assert_allclose(cf.K, gen.K, rtol=1e-10, atol=1e-12 * abs(gen.K).max())


def test_closed_form_needs_two_sites():
    ls = lambda_set_r999()
    modes = collective_modes(3, ls.modes.omega_C, ls.modes.J)
    det = frame_detunings(ls.atom, ls.drives, modes)
    with pytest.raises(InvalidParameterError):
        spin_parameters(3, ls.g_a, ls.g_b, ls.drives, det, modes, closed_form_N2=True)


def test_mode_basis_size_must_match():
    ls = lambda_set_r999()
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    with pytest.raises(InvalidParameterError):
        spin_parameters(3, ls.g_a, ls.g_b, ls.drives, det, ls.modes)


def test_validity_ratios_small_for_presets():
    sp = _params(lambda_set_r999())
    assert 0 < sp.validity_max < 0.05
    assert sp.ratios["Omega_b/2Delta_b"] == pytest.approx(394.16 / (2 * 11825), rel=1e-9)


def test_degenerate_detuning_is_rejected_unless_forced():
    ls = lambda_set_r999()
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    bad = dataclasses.replace(det, delta_k_b=np.array([det.Delta_a, det.delta_k_b[1]]))
    ratios = validity_ratios(ls.drives.Omega_a, ls.drives.Omega_b,
                             ls.modes.s * ls.g_a, ls.modes.s * ls.g_b, bad)
    assert math.isinf(max(ratios.values()))
    with pytest.raises(ModelInvalidError):
        spin_parameters(2, ls.g_a, ls.g_b, ls.drives, bad, ls.modes)
    with np.errstate(divide="ignore", invalid="ignore"):
        forced = spin_parameters(2, ls.g_a, ls.g_b, ls.drives, bad, ls.modes, force=True)
    assert math.isinf(forced.validity_max)


def test_strong_drive_flags_breakdown():
    ls = lambda_set_r999()
    drives = dataclasses.replace(ls.drives, Omega_a=12 * GHZ)
    det = frame_detunings(ls.atom, drives, ls.modes)
    with pytest.raises(ModelInvalidError):
        spin_parameters(2, ls.g_a, ls.g_b, drives, det, ls.modes)


def test_spin_hamiltonian_hermitian_and_parity_preserving():
    sp = _params(lambda_set_r999())
    H = spin_hamiltonian(sp)
    np.testing.assert_allclose(H, H.conj().T, atol=0)
    parity = np.array([bin(i).count("1") % 2 for i in range(4)])
    assert np.all(H[parity[:, None] != parity[None, :]] == 0)


def test_spin_evolution_conserves_probability_and_parity():
    sp = _params(lambda_set_r999())
    t = np.linspace(0, 200e-6, 301)
    tr = spin_evolve(sp, ("up", "down"), t)
    np.testing.assert_allclose(tr.P_up + tr.P_down, 1.0, atol=1e-12)
    odd = np.abs(tr.states[:, [1, 2]]) ** 2
    np.testing.assert_allclose(odd.sum(axis=1), 1.0, atol=1e-12)
    # identical sites: the swapped start gives the mirrored populations
    tr2 = spin_evolve(sp, ("down", "up"), t)
    np.testing.assert_allclose(tr2.P_up[:, 0], tr.P_up[:, 1], atol=1e-12)


def test_flip_flop_exchange_without_field_imbalance():
    # each ordered pair contributes one matrix element K, so the swap completes at pi / (2K)
    K = 2 * np.pi * 5e3
    sp = SpinModelParams(2, np.zeros(2), np.zeros((2, 2), complex),
                         np.array([[0, K], [K, 0]], dtype=complex), None, {})
    t = np.array([0.0, np.pi / (2 * K)])
    tr = spin_evolve(sp, ("up", "down"), t)
    np.testing.assert_allclose(tr.P_up[-1], [0.0, 1.0], atol=1e-12)


def test_bad_initial_labels():
    sp = _params(lambda_set_r999())
    with pytest.raises(InvalidParameterError):
        spin_evolve(sp, ("up",), [0.0])
    with pytest.raises(InvalidParameterError):
        spin_evolve(sp, ("up", "sideways"), [0.0])


def test_level_basis_evolution_matches_pauli_form():
    ls = lambda_set_r999()
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    sp = spin_parameters(2, ls.g_a, ls.g_b, ls.drives, det, ls.modes)
    t = np.linspace(0, 150e-6, 201)
    for start in [("b", "a"), ("a", "a"), ("b", "b")]:
        a = spin_evolve(sp, start, t)
        b = effective_schrodinger_evolve(ls.g_a, ls.g_b, ls.drives, det, ls.modes, start, t)
        np.testing.assert_allclose(a.P_up, b.P_up, atol=1e-10)


def test_effective_terms_reproduce_spin_couplings():
    ls = lambda_set_r9999()
    det = frame_detunings(ls.atom, ls.drives, ls.modes)
    sp = spin_parameters(2, ls.g_a, ls.g_b, ls.drives, det, ls.modes)
    E_a, E_b, raise_amp, flip_amp = effective_hamiltonian_terms(
        ls.g_a, ls.g_b, ls.drives, det, ls.modes)
    np.testing.assert_allclose((E_b - E_a) / 2, sp.B_sites, rtol=1e-12)
    np.testing.assert_allclose(raise_amp, sp.J, rtol=1e-12)
    np.testing.assert_allclose(flip_amp, sp.K, rtol=1e-12)


def test_model_deviation_identical_inputs():
    t = np.linspace(0, 1e-4, 400)
    P = 0.5 + 0.4 * np.exp(-t / 3e-4) * np.cos(2 * np.pi * 2e4 * t)
    out = model_deviation(t, P, t, P, omega_guess=2 * np.pi * 2e4)
    assert out["max"] == [0.0] and out["rms"] == [0.0]
    assert out["spin_decay_rate"] == pytest.approx(1 / 3e-4, rel=1e-3)
    assert out["spin_decay_rate"] == out["full_decay_rate"]


def test_model_deviation_rejects_grid_mismatch():
    t = np.linspace(0, 1, 10)
    with pytest.raises(InvalidParameterError):
        model_deviation(t, np.zeros(10), t * 1.01, np.zeros(10))
