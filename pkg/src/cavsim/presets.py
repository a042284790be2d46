"""Reference parameter sets for 87Rb atoms in composite microcavities.

Frequencies are angular.  Sets whose absolute laser and cavity frequencies
are not fixed by the published detunings are reconstructed from them with
the D2 transition as reference (any consistent choice gives the same physics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from cavsim.jc_array import JCArrayParams
from cavsim.optics import (
    CompositeCavityGeometry,
    MirrorSpec,
    optimize_cooperativity,
    waist_for_coupling,
)
from cavsim.spin import CollectiveModeBasis, DriveSpec, LambdaAtomSpec

TWO_PI = 2 * math.pi
MHZ = TWO_PI * 1e6
GHZ = TWO_PI * 1e9
KHZ = TWO_PI * 1e3

RB87_D2_WAVELENGTH = 780.241e-9
RB87_GAMMA = TWO_PI * 3.0e6
RB87_D2_OMEGA = TWO_PI * 384.230484e12

#: maximum coupling used for the high-cooperativity mode
G_AC_REFERENCE = TWO_PI * 100e6


def _lossless(R):
    return MirrorSpec.lossless(R)


def high_cooperativity_geometry(L_C=156.05e-6, L_W=20.000e-3, R_C=0.999, R_CW=0.98,
                                R_W=0.998, g_AC=G_AC_REFERENCE) -> CompositeCavityGeometry:
    """Composite cavity with the quoted lengths; the waist is set from ``g_AC``."""
    w0 = waist_for_coupling(g_AC, L_C, RB87_D2_WAVELENGTH, RB87_GAMMA)
    return CompositeCavityGeometry(
        L_C=L_C, L_W=L_W, wavelength=RB87_D2_WAVELENGTH,
        mirror_W=_lossless(R_W), mirror_CW=_lossless(R_CW), mirror_C=_lossless(R_C),
        w0=w0, gamma=RB87_GAMMA,
    )


def tuned_high_cooperativity(g_AC=G_AC_REFERENCE):
    """Optimise both lengths inside the rounding interval of the quoted digits.

    The quoted lengths (156.05 um, 20.000 mm) only fix the lengths to within
    half a unit of the last digit; resonance with the atom needs sub-nm
    precision, so the optimiser chooses inside those intervals.
    """
    geom = high_cooperativity_geometry(g_AC=g_AC)
    return optimize_cooperativity(
        geom, (156.045e-6, 156.055e-6), (19.9995e-3, 20.0005e-3), g_AC=g_AC
    )


def resonant_lengths(L_C, L_W, wavelength=RB87_D2_WAVELENGTH):
    """Snap both lengths to the nearest multiple of half a wavelength."""
    half = wavelength / 2
    return round(L_C / half) * half, round(L_W / half) * half


def spectrum_geometry(L_W=15.6e-3) -> CompositeCavityGeometry:
    """Three-mirror cavity with R_C=99.9%, R_CW=98%, R_W=99% and L_C=156 um."""
    L_C, L_W = resonant_lengths(156e-6, L_W)
    return CompositeCavityGeometry(
        L_C=L_C, L_W=L_W, wavelength=RB87_D2_WAVELENGTH,
        mirror_W=_lossless(0.99), mirror_CW=_lossless(0.98), mirror_C=_lossless(0.999),
        w0=4.0e-6, gamma=RB87_GAMMA,
    )


def two_site_jc(n_max=3) -> JCArrayParams:
    """Resonant two-site lattice: g=33.04, J=20, eta=10, kappa=10.6, gamma=3 (MHz x 2 pi)."""
    return JCArrayParams(
        N=2, omega_A=0.0, omega_C=0.0, g=33.04 * MHZ, J=20.0 * MHZ, eta=10.0 * MHZ,
        omega_L=0.0, kappa_tilde=10.6 * MHZ, gamma=3.0 * MHZ, n_max=n_max,
    )


@dataclass(frozen=True)
class LambdaSet:
    """Everything needed for the two-site spin and lambda models."""

    atom: LambdaAtomSpec
    drives: DriveSpec
    modes: CollectiveModeBasis
    g_a: float
    g_b: float
    kappa_tilde: float
    L_W: float = 20.0e-3

    @property
    def fsr_W(self) -> float:
        return math.pi * 299792458.0 / self.L_W


def lambda_set(g_a, g_b, kappa_tilde, delta_a, delta_b, Delta_a=5.000 * GHZ,
               Delta_b=11.825 * GHZ, delta=10.0 * MHZ, J=100.0 * MHZ,
               Omega_a=166.67 * MHZ, Omega_b=394.16 * MHZ, omega_e=RB87_D2_OMEGA,
               gamma=RB87_GAMMA, N=2) -> LambdaSet:
    """Absolute frequencies reconstructed from the frame detunings.

    ``omega_b - delta = delta_a - delta_b`` fixes the ground splitting, the
    laser detunings fix ``nu_a`` and ``nu_b`` and ``delta_a`` fixes the cavity.
    """
    b_frame = delta_a - delta_b
    omega_b = b_frame + delta
    nu_a = omega_e - Delta_a
    nu_b = omega_e - b_frame - Delta_b
    omega_C = omega_e - delta_a
    # the frame choice requires nu_a - nu_b = 2 (omega_b - delta)
    if not math.isclose(nu_a - nu_b, 2 * b_frame, rel_tol=1e-9):
        raise ValueError("detunings are inconsistent with the symmetric frame choice")
    atom = LambdaAtomSpec(omega_e=omega_e, omega_b=omega_b, gamma=gamma)
    drives = DriveSpec(Omega_a=Omega_a, Omega_b=Omega_b, nu_a=nu_a, nu_b=nu_b)
    return LambdaSet(atom, drives, CollectiveModeBasis(N, omega_C, J), g_a, g_b, kappa_tilde)


def lambda_set_r999() -> LambdaSet:
    """Microcavity mirror R_C = 99.9 %: g_a=23.36, g_b=13.49, kappa=10.59 MHz x 2 pi."""
    return lambda_set(23.36 * MHZ, 13.49 * MHZ, 10.59 * MHZ, 11.740 * GHZ, 4.915 * GHZ)


def lambda_set_r9999() -> LambdaSet:
    """Microcavity mirror R_C = 99.99 %: g_a=29.64, g_b=17.11, kappa=3.10 MHz x 2 pi."""
    return lambda_set(29.64 * MHZ, 17.11 * MHZ, 3.10 * MHZ, 11.741 * GHZ, 4.916 * GHZ)
