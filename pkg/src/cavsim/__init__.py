"""Cavity QED with arrays of waveguide-coupled Fabry-Perot microcavities.

Submodules
----------
optics
    Classical composite-cavity response, mode parameters and length optimisation.
operators
    Truncated Hilbert spaces, Lindblad generators, steady states and integration.
jc_array
    Driven-dissipative Jaynes-Cummings lattices.
spin, lambda_model
    Effective spin model of lambda atoms and the master equation it approximates.
localization
    Dynamical localization in a periodically driven chain.
"""

__version__ = "0.1.0"
