import math

import numpy as np
import pytest
from scipy import special

from cavsim.errors import InvalidParameterError
from cavsim.localization import (
    ChainState,
    DrivenChainParams,
    bessel_effective_evolve,
    driven_chain_evolve,
    effective_hopping,
    stroboscopic_fidelity,
    transport_suppression_scan,
)


def test_two_site_rabi_exchange():
    p = DrivenChainParams(N=2, Omega_0=0.0, Omega_1=0.0, omega_drive=0.0, c=1.3)
    t = np.linspace(0, 2 * math.pi / 1.3, 101)
    tr = driven_chain_evolve(p, ChainState.site(2, 0), t)
    np.testing.assert_allclose(tr.populations[:, 1], np.sin(1.3 * t) ** 2, atol=1e-12)


def test_undriven_chain_agrees_with_unit_bessel_factor():
    p = DrivenChainParams(N=6, Omega_0=0.0, Omega_1=0.0, omega_drive=5.0, c=1.0)
    assert effective_hopping(p) == 1.0
    t = p.period * np.arange(0, 40) / 4
    full = driven_chain_evolve(p, ChainState.site(6, 2), t)
    eff = bessel_effective_evolve(p, ChainState.site(6, 2), t)
    np.testing.assert_allclose(full.psi, eff.psi, atol=1e-9)


def test_norm_is_preserved_over_many_periods():
    p = DrivenChainParams(N=7, Omega_0=10.0, Omega_1=17.0, omega_drive=10.0, c=1.0)
    t = p.period * np.array([0, 1, 10, 1000, 10000]) + np.array([0, 0.1, 0.2, 0.3, 0.4])
    tr = driven_chain_evolve(p, ChainState.site(7, 0), t)
    assert tr.diagnostics["max_norm_error"] < 1e-10


def test_fast_drive_renormalises_two_site_hopping():
    # Omega_0 = omega makes the bare hop off-resonant; the drive restores c J_{-1}(x)
    w, x = 60.0, 1.0
    p = DrivenChainParams(N=2, Omega_0=w, Omega_1=x * w, omega_drive=w, c=1.0)
    c_eff = effective_hopping(p)
    assert c_eff == pytest.approx(special.jv(-1, x), rel=1e-14)
    m = np.arange(0, 400, 8)
    tr = driven_chain_evolve(p, ChainState.site(2, 0), m * p.period)
    np.testing.assert_allclose(tr.populations[:, 1], np.sin(c_eff * m * p.period) ** 2, atol=0.02)


def test_drive_at_bessel_zero_freezes_transport():
    x0 = special.jn_zeros(0, 1)[0]
    p = DrivenChainParams(N=5, Omega_0=0.0, Omega_1=x0 * 40.0, omega_drive=40.0, c=1.0)
    assert abs(effective_hopping(p)) < 1e-14
    eff = bessel_effective_evolve(p, ChainState.site(5, 0), [0.0, 50.0])
    np.testing.assert_allclose(eff.populations[-1], [1, 0, 0, 0, 0], atol=1e-24)
    full = driven_chain_evolve(p, ChainState.site(5, 0), p.period * np.arange(0, 400, 20))
    assert full.populations[:, 0].min() > 0.99


def test_non_integer_gradient_has_no_effective_model():
    p = DrivenChainParams(N=3, Omega_0=2.5, Omega_1=1.0, omega_drive=1.0, c=1.0)
    with pytest.raises(InvalidParameterError):
        effective_hopping(p)
    with pytest.raises(InvalidParameterError):
        bessel_effective_evolve(p, ChainState.site(3, 0), [0.0, 1.0])


def test_parameter_and_state_validation():
    with pytest.raises(InvalidParameterError):
        DrivenChainParams(N=1, Omega_0=0, Omega_1=0, omega_drive=1, c=1)
    with pytest.raises(InvalidParameterError):
        DrivenChainParams(N=3, Omega_0=0, Omega_1=1, omega_drive=0, c=1)
    with pytest.raises(InvalidParameterError):
        ChainState(np.array([1.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        ChainState.site(3, 3)
    p = DrivenChainParams(N=3, Omega_0=0, Omega_1=1, omega_drive=1, c=1)
    with pytest.raises(InvalidParameterError):
        driven_chain_evolve(p, ChainState.site(4, 0), [0.0])
    with pytest.raises(InvalidParameterError):
        driven_chain_evolve(p, ChainState.site(3, 0), [1.0, 2.0])
    with pytest.raises(InvalidParameterError):
        driven_chain_evolve(p, ChainState.site(3, 0), [0.0, 2.0, 1.0])


def test_fidelity_starts_at_one_and_stays_bounded():
    p = DrivenChainParams(N=4, Omega_0=20.0, Omega_1=30.0, omega_drive=20.0, c=1.0)
    f = stroboscopic_fidelity(p, ChainState.site(4, 0), 50)
    assert f.shape == (51,)
    assert f[0] == pytest.approx(1.0, abs=1e-14)
    assert np.all((f > 0) & (f <= 1 + 1e-12))


def test_suppression_scan_is_finite_and_matches_undriven_at_zero_drive():
    p = DrivenChainParams(N=4, Omega_0=0.0, Omega_1=0.0, omega_drive=20.0, c=1.0)
    ratios = np.linspace(0.0, 6.0, 61)
    scan = transport_suppression_scan(p, ratios, horizon=30.0)
    assert np.all(np.isfinite(scan.max_end_population))
    assert np.all((scan.max_end_population >= 0) & (scan.max_end_population <= 1 + 1e-12))
    periods = int(math.ceil(30.0 / p.period))
    tr = driven_chain_evolve(p, ChainState.site(4, 0), p.period * np.arange(periods + 1))
    assert scan.max_end_population[0] == pytest.approx(tr.populations[:, -1].max(), abs=1e-10)
    zeros = special.jn_zeros(0, 2)
    assert len(scan.minima) == 2
    np.testing.assert_allclose(scan.minima, zeros, atol=0.1)


def test_scan_rejects_bad_horizon():
    p = DrivenChainParams(N=4, Omega_0=0.0, Omega_1=0.0, omega_drive=20.0, c=1.0)
    with pytest.raises(InvalidParameterError):
        transport_suppression_scan(p, [1.0], horizon=0.0)
